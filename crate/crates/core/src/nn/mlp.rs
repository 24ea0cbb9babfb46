use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::{self, TensorBuf};
use crate::error::{Result, SbrError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Layer widths of a dense network. The activation is applied to hidden
/// layers only; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(SbrError::Config(format!(
                "an MLP needs at least 2 layer widths, got {}",
                self.layer_widths.len()
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(SbrError::Config("MLP layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// A dense network whose parameters live under `prefix` in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub prefix: String,
}

impl Mlp {
    pub fn new(spec: MlpSpec, prefix: impl Into<String>) -> Result<Self> {
        spec.validate()?;
        Ok(Mlp {
            spec,
            prefix: prefix.into(),
        })
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Inserts freshly initialized weights: uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(&self, params: &mut ParamStore, rng: &mut R) {
        for l in 0..self.spec.num_layers() {
            let (fan_in, fan_out) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            let b = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            params.insert(self.weight_name(l), TensorBuf::from_parts(vec![fan_in, fan_out], w));
            params.insert(self.bias_name(l), TensorBuf::from_parts(vec![fan_out], b));
        }
    }

    /// Inserts all-zero weights and biases.
    pub fn init_zeros(&self, params: &mut ParamStore) {
        for l in 0..self.spec.num_layers() {
            let (fan_in, fan_out) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
            params.insert(self.weight_name(l), TensorBuf::zeros(vec![fan_in, fan_out]));
            params.insert(self.bias_name(l), TensorBuf::zeros(vec![fan_out]));
        }
    }

    fn layer_params<'a>(&self, params: &'a ParamStore, l: usize) -> Result<(&'a TensorBuf, &'a TensorBuf)> {
        let w = params.require(&self.weight_name(l))?;
        let b = params.require(&self.bias_name(l))?;
        let (fan_in, fan_out) = (self.spec.layer_widths[l], self.spec.layer_widths[l + 1]);
        if w.rows() != fan_in || w.cols() != fan_out || b.len() != fan_out {
            return Err(SbrError::Contract(format!(
                "parameters of {}.l{l} do not match widths {fan_in}->{fan_out}",
                self.prefix
            )));
        }
        Ok((w, b))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim() {
            return Err(SbrError::dim(
                format!("{}.l0 input", self.prefix),
                self.spec.input_dim(),
                cols,
            ));
        }
        Ok(())
    }

    /// Row-wise forward pass without recording.
    pub fn forward(&self, params: &ParamStore, input: &TensorBuf) -> Result<TensorBuf> {
        self.check_input(input.cols())?;
        let mut h = TensorBuf::from_parts(vec![input.rows(), input.cols()], input.values().to_vec());
        let last = self.spec.num_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer_params(params, l)?;
            h = tensor::add_row(&tensor::matmul(&h, w), b);
            if l < last {
                let act = self.spec.activation;
                h = tensor::map(&h, |x| act.apply(x));
            }
        }
        Ok(h)
    }

    /// Forward pass for a single vector.
    pub fn forward_one(&self, params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(params, &TensorBuf::row_vector(input.to_vec()))?.into_values())
    }

    /// Recorded forward pass.
    pub fn forward_graph(&self, g: &mut Graph<'_>, input: NodeId) -> Result<NodeId> {
        self.check_input(g.value(input).cols())?;
        let mut h = input;
        let last = self.spec.num_layers() - 1;
        for l in 0..=last {
            self.layer_params(g.params(), l)?;
            let w = g.param(&self.weight_name(l))?;
            let b = g.param(&self.bias_name(l))?;
            let lin = g.matmul(h, w)?;
            h = g.add_row(lin, b)?;
            if l < last {
                h = match self.spec.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::new(MlpSpec::new(vec![3, 2], Activation::Tanh).unwrap(), "n").unwrap();
        let mut p = ParamStore::new();
        mlp.init_zeros(&mut p);
        let out = mlp.forward_one(&p, &[1.5, -2.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::new(MlpSpec::new(vec![2, 2], Activation::Tanh).unwrap(), "id").unwrap();
        let mut p = ParamStore::new();
        p.insert(mlp.weight_name(0), TensorBuf::identity(2));
        p.insert(mlp.bias_name(0), TensorBuf::zeros(vec![2]));
        assert_eq!(mlp.forward_one(&p, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mlp = Mlp::new(MlpSpec::new(vec![2, 4, 1], Activation::Tanh).unwrap(), "net").unwrap();
        let mut p = ParamStore::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(7));
        let x = [0.3, -1.2];

        // Independent scalar loop.
        let w0 = p.get("net.l0.w").unwrap().values();
        let b0 = p.get("net.l0.b").unwrap().values();
        let w1 = p.get("net.l1.w").unwrap().values();
        let b1 = p.get("net.l1.b").unwrap().values();
        let mut hidden = [0.0; 4];
        for j in 0..4 {
            let mut s = b0[j];
            for i in 0..2 {
                s += x[i] * w0[i * 4 + j];
            }
            hidden[j] = s.tanh();
        }
        let mut out = b1[0];
        for j in 0..4 {
            out += hidden[j] * w1[j];
        }

        let got = mlp.forward_one(&p, &x).unwrap()[0];
        assert!((got - out).abs() < 1e-14, "{got} vs {out}");
    }

    #[test]
    fn batched_rows_map_independently() {
        let mlp = Mlp::new(MlpSpec::new(vec![2, 5, 3], Activation::Relu).unwrap(), "n").unwrap();
        let mut p = ParamStore::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let batch = TensorBuf::from_rows(&[vec![0.1, 0.2], vec![-0.4, 0.9]]).unwrap();
        let out = mlp.forward(&p, &batch).unwrap();
        assert_eq!(out.row(0), mlp.forward_one(&p, &[0.1, 0.2]).unwrap().as_slice());
        assert_eq!(out.row(1), mlp.forward_one(&p, &[-0.4, 0.9]).unwrap().as_slice());
    }

    #[test]
    fn input_width_mismatch_names_first_layer() {
        let mlp = Mlp::new(MlpSpec::new(vec![3, 2], Activation::Tanh).unwrap(), "enc").unwrap();
        let mut p = ParamStore::new();
        mlp.init_zeros(&mut p);
        let err = mlp.forward_one(&p, &[1.0]).unwrap_err();
        assert!(err.to_string().contains("enc.l0"), "{err}");
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], Activation::Tanh).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Tanh).is_err());
    }
}
