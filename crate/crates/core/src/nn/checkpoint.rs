//! Checkpoint files: one line of JSON header, then the parameter blocks as
//! little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpSpec;
use super::params::ParamStore;
use super::tensor::TensorBuf;
use crate::error::{Result, SbrError};

pub const CHECKPOINT_FORMAT: &str = "sbr-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub kind: String,
    pub seed: u64,
    pub networks: BTreeMap<String, MlpSpec>,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        seed: u64,
        networks: BTreeMap<String, MlpSpec>,
        params: ParamStore,
        meta: serde_json::Value,
    ) -> Self {
        let entries = params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                kind: kind.to_string(),
                seed,
                networks,
                params: entries,
                meta,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for entry in &self.header.params {
            let t = self.params.require(&entry.name)?;
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| SbrError::Schema("checkpoint header is not newline-terminated".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(SbrError::Schema(format!(
                "unsupported checkpoint format `{}`",
                header.format
            )));
        }
        let mut body = &bytes[split + 1..];
        let mut params = ParamStore::new();
        for entry in &header.params {
            let n: usize = entry.shape.iter().product();
            if body.len() < n * 8 {
                return Err(SbrError::Schema(format!(
                    "checkpoint truncated inside block `{}`",
                    entry.name
                )));
            }
            let values = body[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[n * 8..];
            params.insert(entry.name.clone(), TensorBuf::new(entry.shape.clone(), values)?);
        }
        if !body.is_empty() {
            return Err(SbrError::Schema(format!(
                "{} trailing bytes after the last parameter block",
                body.len()
            )));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    pub fn network(&self, name: &str) -> Result<&MlpSpec> {
        self.header
            .networks
            .get(name)
            .ok_or_else(|| SbrError::Schema(format!("checkpoint has no network `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let mlp = Mlp::new(spec.clone(), "net").unwrap();
        let mut p = ParamStore::new();
        mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(3));
        p.insert("log_std", TensorBuf::row_vector(vec![-0.5, 0.25]));
        let mut nets = BTreeMap::new();
        nets.insert("net".to_string(), spec);
        Checkpoint::new("test", 3, nets, p, serde_json::json!({"note": 1.5}))
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_and_padded_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Checkpoint::from_bytes(&padded).is_err());
    }
}
