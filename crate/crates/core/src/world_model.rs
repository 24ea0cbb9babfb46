//! Simplified latent world model: encoder, latent dynamics predictor and
//! decoder, trained with a discounted multi-step latent-consistency plus
//! reconstruction loss. Only the encoder is used downstream, as the space
//! in which state similarity is measured.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NormStats, Window};
use crate::error::{Result, SbrError};
use crate::nn::{Activation, AdamConfig, AdamState, Checkpoint, Graph, Mlp, MlpSpec, NodeId, ParamStore, TensorBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// `ẑ_{t+1} = d(ẑ_t, a_t)` starting from `ẑ_0 = q(s_0)`.
    #[default]
    OpenLoop,
    /// `ẑ_{t+1} = d(q(s_t), a_t)`.
    TeacherForced,
}

/// Which latent feeds the reconstruction term at `t >= 1` in open-loop mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconLatent {
    #[default]
    Rollout,
    Encoder,
}

/// How states are mapped into the similarity space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Trained world-model encoder on normalized states.
    #[default]
    WorldModel,
    /// No encoder: similarity directly on normalized states.
    Passthrough,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WmConfig {
    pub encoder: EncoderMode,
    pub latent_dim: usize,
    /// Hidden widths shared by encoder, dynamics and decoder.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub horizon: usize,
    /// Per-step weight `λ` of the horizon sum, in (0, 1].
    pub decay: f64,
    pub rollout_mode: RolloutMode,
    pub recon_latent: ReconLatent,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the windows visited per epoch (a fresh random subset each epoch).
    pub max_windows_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for WmConfig {
    fn default() -> Self {
        WmConfig {
            encoder: EncoderMode::WorldModel,
            latent_dim: 16,
            hidden: vec![64],
            activation: Activation::Tanh,
            horizon: 3,
            decay: 0.9,
            rollout_mode: RolloutMode::OpenLoop,
            recon_latent: ReconLatent::Rollout,
            lr: 1e-3,
            batch_size: 64,
            epochs: 50,
            max_windows_per_epoch: None,
            seed: 0,
        }
    }
}

impl WmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(SbrError::Config(format!("world-model decay must be in (0, 1], got {}", self.decay)));
        }
        if self.latent_dim == 0 {
            return Err(SbrError::Config("latent_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(SbrError::Config("world-model batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SbrError::Config(format!("world-model lr must be positive, got {}", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(SbrError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Maps raw environment states into the space where similarity is measured.
pub trait StateEncoder: Sync {
    fn latent_dim(&self) -> usize;

    fn encode_states(&self, states: &[&[f64]]) -> Result<Vec<Vec<f64>>>;
}

/// Raw states are their own latents.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEncoder {
    pub dim: usize,
}

impl StateEncoder for IdentityEncoder {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn encode_states(&self, states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        states
            .iter()
            .map(|s| {
                if s.len() != self.dim {
                    return Err(SbrError::dim("identity encoder input", self.dim, s.len()));
                }
                Ok(s.to_vec())
            })
            .collect()
    }
}

/// Normalized raw states as latents (no learned encoder).
#[derive(Clone, Debug)]
pub struct PassthroughEncoder {
    pub norm: NormStats,
}

impl StateEncoder for PassthroughEncoder {
    fn latent_dim(&self) -> usize {
        self.norm.state_dim()
    }

    fn encode_states(&self, states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        states
            .iter()
            .map(|s| {
                if s.len() != self.norm.state_dim() {
                    return Err(SbrError::dim("passthrough encoder input", self.norm.state_dim(), s.len()));
                }
                Ok(self.norm.normalize_state(s))
            })
            .collect()
    }
}

/// Selects the target of the latent-consistency term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsistencyTarget {
    /// `sg(q(s_{t+1}))` recorded in the graph.
    StopGradient,
    /// `q(s_{t+1})` evaluated outside the graph and inserted as a constant.
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub config: WmConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub decoder: Mlp,
    pub params: ParamStore,
    pub norm: NormStats,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl WorldModel {
    fn networks(config: &WmConfig, state_dim: usize, action_dim: usize) -> Result<(Mlp, Mlp, Mlp)> {
        let act = config.activation;
        let enc = Mlp::new(MlpSpec::new(widths(state_dim, &config.hidden, config.latent_dim), act)?, "encoder")?;
        let dynm = Mlp::new(
            MlpSpec::new(widths(config.latent_dim + action_dim, &config.hidden, config.latent_dim), act)?,
            "dynamics",
        )?;
        let dec = Mlp::new(MlpSpec::new(widths(config.latent_dim, &config.hidden, state_dim), act)?, "decoder")?;
        Ok((enc, dynm, dec))
    }

    /// Freshly initialized model; weights drawn from `config.seed`.
    pub fn new(config: WmConfig, state_dim: usize, action_dim: usize, norm: NormStats) -> Result<Self> {
        config.validate()?;
        let (encoder, dynamics, decoder) = Self::networks(&config, state_dim, action_dim)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        encoder.init(&mut params, &mut rng);
        dynamics.init(&mut params, &mut rng);
        decoder.init(&mut params, &mut rng);
        Ok(WorldModel {
            config,
            state_dim,
            action_dim,
            encoder,
            dynamics,
            decoder,
            params,
            norm,
        })
    }

    /// Single-layer identity encoder and decoder with dynamics `d(z, a) = z`.
    pub fn identity(state_dim: usize, action_dim: usize) -> Result<Self> {
        let config = WmConfig {
            latent_dim: state_dim,
            hidden: Vec::new(),
            ..WmConfig::default()
        };
        let (encoder, dynamics, decoder) = Self::networks(&config, state_dim, action_dim)?;
        let mut params = ParamStore::new();
        params.insert(encoder.weight_name(0), TensorBuf::identity(state_dim));
        params.insert(encoder.bias_name(0), TensorBuf::zeros(vec![state_dim]));
        params.insert(decoder.weight_name(0), TensorBuf::identity(state_dim));
        params.insert(decoder.bias_name(0), TensorBuf::zeros(vec![state_dim]));
        let mut dw = TensorBuf::zeros(vec![state_dim + action_dim, state_dim]);
        for i in 0..state_dim {
            dw.values_mut()[i * state_dim + i] = 1.0;
        }
        params.insert(dynamics.weight_name(0), dw);
        params.insert(dynamics.bias_name(0), TensorBuf::zeros(vec![state_dim]));
        Ok(WorldModel {
            config,
            state_dim,
            action_dim,
            encoder,
            dynamics,
            decoder,
            params,
            norm: NormStats::identity(state_dim, action_dim),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// `z = q(s)` for a state already in normalized space.
    pub fn encode(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward_one(&self.params, state)
    }

    pub fn encode_batch(&self, states: &TensorBuf) -> Result<TensorBuf> {
        self.encoder.forward(&self.params, states)
    }

    /// `ẑ' = d(z, a)`.
    pub fn predict_latent(&self, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(SbrError::dim("predict_latent latent", self.latent_dim(), z.len()));
        }
        if a.len() != self.action_dim {
            return Err(SbrError::dim("predict_latent action", self.action_dim, a.len()));
        }
        let mut input = z.to_vec();
        input.extend_from_slice(a);
        self.dynamics.forward_one(&self.params, &input)
    }

    /// `ŝ = p(z)`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward_one(&self.params, z)
    }

    /// Records the mean windowed loss over `windows` (all of one horizon):
    ///
    /// `Σ_{t=0}^{H} λ^t ( ||ẑ_{t+1} − sg(q(s_{t+1}))||² + ||s_t − p(z_t)||² )`
    pub fn loss_graph(&self, g: &mut Graph<'_>, windows: &[Window<'_>], target: ConsistencyTarget) -> Result<NodeId> {
        let first = windows
            .first()
            .ok_or_else(|| SbrError::Contract("world-model loss needs at least one window".into()))?;
        let h = first.horizon();
        if let Some(w) = windows.iter().find(|w| w.horizon() != h) {
            return Err(SbrError::dim("window horizon", h, w.horizon()));
        }
        let states_at = |t: usize| -> Result<TensorBuf> {
            TensorBuf::from_rows(&windows.iter().map(|w| w.states[t].as_slice()).collect::<Vec<_>>())
        };
        let actions_at = |t: usize| -> Result<TensorBuf> {
            TensorBuf::from_rows(&windows.iter().map(|w| w.actions[t].as_slice()).collect::<Vec<_>>())
        };

        let decay = self.config.decay;
        let mode = self.config.rollout_mode;
        let mut s_nodes = Vec::with_capacity(h + 2);
        for t in 0..=h + 1 {
            let s = states_at(t)?;
            s_nodes.push(g.input(s));
        }

        let mut enc_nodes: Vec<Option<NodeId>> = vec![None; h + 2];
        let mut encode = |g: &mut Graph<'_>, t: usize| -> Result<NodeId> {
            if let Some(id) = enc_nodes[t] {
                return Ok(id);
            }
            let id = self.encoder.forward_graph(g, s_nodes[t])?;
            enc_nodes[t] = Some(id);
            Ok(id)
        };

        let mut total: Option<NodeId> = None;
        let mut rolled = encode(g, 0)?;
        for t in 0..=h {
            let z_t = match mode {
                RolloutMode::OpenLoop => match self.config.recon_latent {
                    ReconLatent::Rollout => rolled,
                    ReconLatent::Encoder => encode(g, t)?,
                },
                RolloutMode::TeacherForced => encode(g, t)?,
            };
            let dyn_in_latent = match mode {
                RolloutMode::OpenLoop => rolled,
                RolloutMode::TeacherForced => encode(g, t)?,
            };
            let a = actions_at(t)?;
            let a = g.input(a);
            let dyn_in = g.concat_cols(dyn_in_latent, a)?;
            let z_next = self.dynamics.forward_graph(g, dyn_in)?;

            let tgt = match target {
                ConsistencyTarget::StopGradient => {
                    let enc_next = match mode {
                        RolloutMode::TeacherForced => encode(g, t + 1)?,
                        RolloutMode::OpenLoop => self.encoder.forward_graph(g, s_nodes[t + 1])?,
                    };
                    g.stop_gradient(enc_next)
                }
                ConsistencyTarget::Constant => {
                    let value = self.encoder.forward(&self.params, &states_at(t + 1)?)?;
                    g.input(value)
                }
            };
            let diff = g.sub(z_next, tgt)?;
            let sq = g.square(diff);
            let pred = g.sum(sq);

            let recon = self.decoder.forward_graph(g, z_t)?;
            let rdiff = g.sub(s_nodes[t], recon)?;
            let rsq = g.square(rdiff);
            let rec = g.sum(rsq);

            let both = g.add(pred, rec)?;
            let term = g.scale(both, decay.powi(t as i32));
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
            rolled = z_next;
        }
        Ok(g.scale(total.expect("horizon loop runs at least once"), 1.0 / windows.len() as f64))
    }

    /// Loss of one window (states in normalized space).
    pub fn wm_loss(&self, window: &Window<'_>) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let loss = self.loss_graph(&mut g, std::slice::from_ref(window), ConsistencyTarget::StopGradient)?;
        let v = g.scalar(loss)?;
        if !v.is_finite() {
            return Err(SbrError::Divergence(format!(
                "world-model loss is {v} on window ({}, {})",
                window.traj_id, window.start
            )));
        }
        Ok(v)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut nets = BTreeMap::new();
        nets.insert("encoder".to_string(), self.encoder.spec.clone());
        nets.insert("dynamics".to_string(), self.dynamics.spec.clone());
        nets.insert("decoder".to_string(), self.decoder.spec.clone());
        let meta = serde_json::json!({
            "config": self.config,
            "norm": self.norm,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
        });
        Ok(Checkpoint::new("world_model", self.config.seed, nets, self.params.clone(), meta))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != "world_model" {
            return Err(SbrError::Schema(format!("expected a world_model checkpoint, found `{}`", ck.header.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            config: WmConfig,
            norm: NormStats,
            state_dim: usize,
            action_dim: usize,
        }
        let meta: Meta = serde_json::from_value(ck.header.meta.clone())?;
        let encoder = Mlp::new(ck.network("encoder")?.clone(), "encoder")?;
        let dynamics = Mlp::new(ck.network("dynamics")?.clone(), "dynamics")?;
        let decoder = Mlp::new(ck.network("decoder")?.clone(), "decoder")?;
        Ok(WorldModel {
            config: meta.config,
            state_dim: meta.state_dim,
            action_dim: meta.action_dim,
            encoder,
            dynamics,
            decoder,
            params: ck.params.clone(),
            norm: meta.norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        WorldModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl StateEncoder for WorldModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Normalizes raw states with the model's statistics, then encodes.
    fn encode_states(&self, states: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<Vec<f64>> = states
            .iter()
            .map(|s| {
                if s.len() != self.state_dim {
                    return Err(SbrError::dim("world-model encoder input", self.state_dim, s.len()));
                }
                Ok(self.norm.normalize_state(s))
            })
            .collect::<Result<_>>()?;
        Ok(self.encode_batch(&TensorBuf::from_rows(&rows)?)?.to_rows())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WmTrainLog {
    pub epoch_losses: Vec<f64>,
    pub windows: usize,
    pub updates: usize,
}

/// Fits a world model on every window of `expert ∪ offline`.
///
/// Windows are enumerated in `(traj_id, start)` order before shuffling, so
/// the result does not depend on the order trajectories were stored in.
pub fn train_world_model(expert: &Dataset, offline: &Dataset, config: &WmConfig) -> Result<(WorldModel, WmTrainLog)> {
    config.validate()?;
    let union = expert.merge(offline)?;
    let (Some(state_dim), Some(action_dim)) = (union.state_dim(), union.action_dim()) else {
        return Err(SbrError::Contract("world-model training needs a non-empty dataset".into()));
    };
    let norm = NormStats::compute(&[expert, offline])?;
    let normalized = norm.normalize_states_of(&union);
    let windows: Vec<Window<'_>> = normalized.windows(config.horizon).collect();
    if windows.is_empty() {
        return Err(SbrError::Contract(format!(
            "no trajectory is long enough for horizon {}",
            config.horizon
        )));
    }

    let mut model = WorldModel::new(config.clone(), state_dim, action_dim, norm)?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(config.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let per_epoch = config.max_windows_per_epoch.unwrap_or(windows.len()).min(windows.len());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = WmTrainLog {
        windows: windows.len(),
        ..WmTrainLog::default()
    };
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order[..per_epoch].chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| windows[i]));
            let grads = {
                let mut g = Graph::new(&model.params);
                let loss = model.loss_graph(&mut g, &batch, ConsistencyTarget::StopGradient)?;
                let v = g.scalar(loss)?;
                if !v.is_finite() {
                    return Err(SbrError::Divergence(format!(
                        "world-model loss is {v} at epoch {epoch}, batch {b}"
                    )));
                }
                sum += v;
                batches += 1;
                g.backward(loss)?
            };
            adam.step(&mut model.params, &grads).map_err(|e| {
                SbrError::Divergence(format!("world model at epoch {epoch}, batch {b}: {e}"))
            })?;
            log.updates += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("world model epoch {epoch}: loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

/// Writes `traj_id,t,source,z_0..z_{d-1}` for every state of `data`.
pub fn export_embeddings(encoder: &dyn StateEncoder, data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, embeddings_csv(encoder, data)?)?;
    Ok(())
}

pub fn embeddings_csv(encoder: &dyn StateEncoder, data: &Dataset) -> Result<String> {
    let mut out = String::from("traj_id,t,source");
    for i in 0..encoder.latent_dim() {
        write!(out, ",z_{i}").unwrap();
    }
    out.push('\n');
    for traj in data.iter() {
        let states: Vec<&[f64]> = traj.states.iter().map(Vec::as_slice).collect();
        let latents = encoder.encode_states(&states)?;
        let source = match traj.source {
            crate::dataset::Source::Expert => "expert",
            crate::dataset::Source::Offline => "offline",
        };
        for (t, z) in latents.iter().enumerate() {
            write!(out, "{},{t},{source}", traj.traj_id).unwrap();
            for v in z {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}
