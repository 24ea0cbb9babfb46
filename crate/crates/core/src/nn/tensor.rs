use serde::{Deserialize, Serialize};

use crate::error::{Result, SbrError};

/// Dense row-major buffer of `f64` values.
///
/// Rank-1 buffers of length `n` behave as `1 x n` row vectors in the
/// matrix kernels; rank-2 buffers are `rows x cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBuf {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TensorBuf {
    /// Checked constructor: the shape must cover the values exactly and
    /// every value must be finite.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(SbrError::dim("tensor shape", expected, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SbrError::Contract(format!(
                "tensor value at flat index {i} is not finite"
            )));
        }
        Ok(TensorBuf { shape, values })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        TensorBuf { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorBuf {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        TensorBuf::from_parts(vec![1, 1], vec![v])
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        TensorBuf::new(vec![rows, cols], values)
    }

    /// Stacks equally sized rows into a `rows x cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(SbrError::dim(format!("row {i}"), cols, r.len()));
            }
            values.extend_from_slice(r);
        }
        TensorBuf::new(vec![rows.len(), cols], values)
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        let n = values.len();
        TensorBuf::from_parts(vec![1, n], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = TensorBuf::zeros(vec![n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// Matrix kernels shared by the recorded graph and the plain forward pass so
// that both produce bit-identical values.

pub(crate) fn matmul(a: &TensorBuf, b: &TensorBuf) -> TensorBuf {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(k, b.rows());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.values[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.values[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    TensorBuf::from_parts(vec![n, m], out)
}

/// `a^T · b` without materializing the transpose.
pub(crate) fn matmul_tn(a: &TensorBuf, b: &TensorBuf) -> TensorBuf {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(n, b.rows());
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a.values[i * k..(i + 1) * k];
        let brow = &b.values[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    TensorBuf::from_parts(vec![k, m], out)
}

/// `a · b^T` without materializing the transpose.
pub(crate) fn matmul_nt(a: &TensorBuf, b: &TensorBuf) -> TensorBuf {
    let (n, m, k) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(m, b.cols());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a.values[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b.values[j * m..(j + 1) * m];
            let mut s = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + j] = s;
        }
    }
    TensorBuf::from_parts(vec![n, k], out)
}

pub(crate) fn add_row(a: &TensorBuf, row: &TensorBuf) -> TensorBuf {
    let m = a.cols();
    let r = &row.values;
    let values = a
        .values
        .chunks(m)
        .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
        .collect();
    TensorBuf::from_parts(vec![a.rows(), m], values)
}

pub(crate) fn map(a: &TensorBuf, f: impl Fn(f64) -> f64) -> TensorBuf {
    TensorBuf::from_parts(vec![a.rows(), a.cols()], a.values.iter().map(|&x| f(x)).collect())
}

pub(crate) fn zip_map(a: &TensorBuf, b: &TensorBuf, f: impl Fn(f64, f64) -> f64) -> TensorBuf {
    TensorBuf::from_parts(
        vec![a.rows(), a.cols()],
        a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn concat_cols(a: &TensorBuf, b: &TensorBuf) -> TensorBuf {
    let (n, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut values = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        values.extend_from_slice(a.row(i));
        values.extend_from_slice(b.row(i));
    }
    TensorBuf::from_parts(vec![n, ca + cb], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_constructor_rejects_bad_shapes_and_nans() {
        assert!(TensorBuf::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(TensorBuf::new(vec![1, 2], vec![1.0, f64::NAN]).is_err());
        assert!(TensorBuf::new(vec![1, 2], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = TensorBuf::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = TensorBuf::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        // a^T b: 3x2
        let tn = matmul_tn(&a, &b);
        assert_eq!(tn.values(), &[3.0, 7.0, 4.5, 8.0, 6.0, 9.0]);
        let c = TensorBuf::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let nt = matmul_nt(&a, &c);
        assert_eq!(nt.values(), &[4.0, 2.0, 10.0, 5.0]);
    }
}
