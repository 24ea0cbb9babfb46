//! Diagonal-Gaussian MLP policy, weighted behavior cloning and evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NormStats};
use crate::envs::{reset, rollout_from, Actor, PointMazeSpec};
use crate::error::{Result, SbrError};
use crate::nn::{Activation, AdamConfig, AdamState, Checkpoint, Graph, Mlp, MlpSpec, NodeId, ParamStore, TensorBuf};
use crate::retrieval::RetrievedSet;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_STD: &str = "log_std";
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    /// Expert plus retrieved transitions.
    #[default]
    Sbr,
    /// Expert transitions only.
    BcExp,
    /// Expert plus every offline transition.
    BcAll,
}

impl BcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BcMode::Sbr => "sbr",
            BcMode::BcExp => "bc_exp",
            BcMode::BcAll => "bc_all",
        }
    }
}

impl std::fmt::Display for BcMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub mode: BcMode,
    /// Retrieved samples from search step `k` get weight `decay^k`.
    pub decay: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Batches per epoch; one pass over the training set when absent.
    pub steps_per_epoch: Option<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Keep the standard deviation at one (squared-error cloning).
    pub fixed_std: bool,
    /// In sbr mode, rescale retrieved weights so the retrieved set carries the
    /// same total mass as the expert set before decay. Off means plain
    /// per-sample mixing.
    pub balance_sources: bool,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            mode: BcMode::Sbr,
            decay: 0.9,
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            steps_per_epoch: None,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            fixed_std: false,
            balance_sources: false,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(SbrError::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(SbrError::Config("lr and batch_size must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(SbrError::Config("steps_per_epoch must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(SbrError::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// `pi(a|s) = N(mean(norm(s)), diag(exp(log_std))^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub params: ParamStore,
    pub norm: NormStats,
    pub fixed_std: bool,
}

impl GaussianPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        fixed_std: bool,
        norm: NormStats,
        seed: u64,
    ) -> Result<Self> {
        if norm.state_dim() != state_dim {
            return Err(SbrError::dim("policy normalization", state_dim, norm.state_dim()));
        }
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        let mean_net = Mlp::new(MlpSpec::new(widths, activation)?, "mean")?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mean_net.init(&mut params, &mut rng);
        params.insert(LOG_STD, TensorBuf::zeros(vec![action_dim]));
        Ok(GaussianPolicy {
            mean_net,
            params,
            norm,
            fixed_std,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.spec.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.spec.output_dim()
    }

    pub fn log_std(&self) -> Vec<f64> {
        if self.fixed_std {
            return vec![0.0; self.action_dim()];
        }
        self.params.get(LOG_STD).map(|t| t.values().to_vec()).unwrap_or_default()
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(SbrError::dim("policy state", self.state_dim(), s.len()));
        }
        Ok(())
    }

    /// Mean action for a raw state.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        self.mean_net.forward_one(&self.params, &self.norm.normalize_state(s))
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        if a.len() != self.action_dim() {
            return Err(SbrError::dim("policy action", self.action_dim(), a.len()));
        }
        let mu = self.act(s)?;
        let ls = self.log_std();
        let mut lp = 0.0;
        for i in 0..a.len() {
            let z = (a[i] - mu[i]) * (-ls[i]).exp();
            lp -= 0.5 * z * z + ls[i] + HALF_LN_2PI;
        }
        Ok(lp)
    }

    pub fn sample(&self, s: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mu = self.act(s)?;
        let ls = self.log_std();
        Ok(mu
            .iter()
            .zip(&ls)
            .map(|(m, l)| {
                let z: f64 = StandardNormal.sample(rng);
                m + l.exp() * z
            })
            .collect())
    }

    /// `sum_i w_i * nll_i / sum_i w_i` over a batch.
    pub fn loss_graph(&self, g: &mut Graph<'_>, batch: &BcBatch) -> Result<NodeId> {
        let wsum: f64 = batch.weights.iter().sum();
        if !(wsum > 0.0) {
            return Err(SbrError::Contract("behavior-cloning batch has zero total weight".into()));
        }
        let da = self.action_dim();
        let s = g.input(batch.states.clone());
        let a = g.input(batch.actions.clone());
        let w = g.input(TensorBuf::from_parts(vec![batch.weights.len(), 1], batch.weights.clone()));
        let mu = self.mean_net.forward_graph(g, s)?;
        let ls = if self.fixed_std {
            g.input(TensorBuf::zeros(vec![1, da]))
        } else {
            g.param(LOG_STD)?
        };
        let neg_ls = g.scale(ls, -1.0);
        let inv_std = g.exp(neg_ls);
        let diff = g.sub(a, mu)?;
        let z = g.mul_row(diff, inv_std)?;
        let z2 = g.square(z);
        let rows = g.sum_cols(z2);
        let weighted = g.mul_col(rows, w)?;
        let quad = g.sum(weighted);
        let quad = g.scale(quad, 0.5 / wsum);
        let ls_sum = g.sum(ls);
        let norm_const = g.constant(da as f64 * HALF_LN_2PI);
        let tail = g.add(ls_sum, norm_const)?;
        g.add(quad, tail)
    }

    pub fn bc_loss(&self, batch: &BcBatch) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let l = self.loss_graph(&mut g, batch)?;
        g.scalar(l)
    }

    fn clamp_log_std(&mut self) {
        if let Some(t) = self.params.get_mut(LOG_STD) {
            for v in t.values_mut() {
                *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let mut nets = BTreeMap::new();
        nets.insert("mean".to_string(), self.mean_net.spec.clone());
        let meta = serde_json::json!({ "norm": self.norm, "fixed_std": self.fixed_std });
        Ok(Checkpoint::new("policy", seed, nets, self.params.clone(), meta))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != "policy" {
            return Err(SbrError::Schema(format!("expected a policy checkpoint, found `{}`", ck.header.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            norm: NormStats,
            fixed_std: bool,
        }
        let meta: Meta = serde_json::from_value(ck.header.meta.clone())?;
        let mean_net = Mlp::new(ck.network("mean")?.clone(), "mean")?;
        ck.params.require(LOG_STD)?;
        Ok(GaussianPolicy {
            mean_net,
            params: ck.params.clone(),
            norm: meta.norm,
            fixed_std: meta.fixed_std,
        })
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_checkpoint(seed)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        GaussianPolicy::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Actor for GaussianPolicy {
    fn act(&self, obs: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        GaussianPolicy::act(self, obs)
    }
}

/// One cloning target with its sample weight.
#[derive(Clone, Debug, PartialEq)]
pub struct BcSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub weight: f64,
}

/// Training samples for a mode: expert transitions first in `(traj_id, t)`
/// order, then retrieved (by step, then source) or offline transitions.
pub fn build_training_set(
    mode: BcMode,
    expert: &Dataset,
    retrieved: Option<&RetrievedSet>,
    offline: &Dataset,
    decay: f64,
    balance_sources: bool,
) -> Result<Vec<BcSample>> {
    let mut out = Vec::new();
    let push_all = |out: &mut Vec<BcSample>, data: &Dataset| {
        for tr in data.iter() {
            for t in 0..tr.len() {
                out.push(BcSample {
                    state: tr.states[t].clone(),
                    action: tr.actions[t].clone(),
                    weight: 1.0,
                });
            }
        }
    };
    push_all(&mut out, expert);
    match mode {
        BcMode::BcExp => {}
        BcMode::BcAll => push_all(&mut out, offline),
        BcMode::Sbr => {
            let set = retrieved.ok_or_else(|| SbrError::Contract("sbr mode needs a retrieved set".into()))?;
            let scale = if balance_sources && !set.is_empty() {
                out.len() as f64 / set.len() as f64
            } else {
                1.0
            };
            for s in set.samples() {
                out.push(BcSample {
                    state: s.state.clone(),
                    action: s.action.clone(),
                    weight: scale * decay.powi(s.step as i32),
                });
            }
        }
    }
    Ok(out)
}

/// Normalized states, raw actions and weights of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct BcBatch {
    pub states: TensorBuf,
    pub actions: TensorBuf,
    pub weights: Vec<f64>,
}

impl BcBatch {
    pub fn new(norm: &NormStats, samples: &[&BcSample]) -> Result<Self> {
        let states: Vec<Vec<f64>> = samples.iter().map(|s| norm.normalize_state(&s.state)).collect();
        let actions: Vec<&[f64]> = samples.iter().map(|s| s.action.as_slice()).collect();
        let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(SbrError::Contract("sample weights must be finite and non-negative".into()));
        }
        Ok(BcBatch {
            states: TensorBuf::from_rows(&states)?,
            actions: TensorBuf::from_rows(&actions)?,
            weights,
        })
    }
}

/// Policy plus optimizer state, advanced one minibatch at a time.
#[derive(Clone, Debug)]
pub struct BcTrainer {
    pub policy: GaussianPolicy,
    adam: AdamState,
}

impl BcTrainer {
    pub fn new(policy: GaussianPolicy, lr: f64) -> Self {
        let adam = AdamState::new(&policy.params, AdamConfig::with_lr(lr));
        BcTrainer { policy, adam }
    }

    /// One Adam step. Batches whose weights sum to zero are skipped and
    /// return `None`.
    pub fn step(&mut self, batch: &BcBatch) -> Result<Option<f64>> {
        if !(batch.weights.iter().sum::<f64>() > 0.0) {
            log::warn!("skipping a behavior-cloning batch with zero total weight");
            return Ok(None);
        }
        let (loss, grads) = {
            let mut g = Graph::new(&self.policy.params);
            let l = self.policy.loss_graph(&mut g, batch)?;
            let v = g.scalar(l)?;
            if !v.is_finite() {
                return Err(SbrError::Divergence(format!("behavior-cloning loss is {v}")));
            }
            (v, g.backward(l)?)
        };
        self.adam.step(&mut self.policy.params, &grads)?;
        self.policy.clamp_log_std();
        Ok(Some(loss))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BcTrainLog {
    pub mode: BcMode,
    pub samples: usize,
    pub total_weight: f64,
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
    pub skipped_batches: usize,
}

/// Clones the mode's training set. `norm` is applied to policy inputs.
pub fn train_policy(
    expert: &Dataset,
    retrieved: Option<&RetrievedSet>,
    offline: &Dataset,
    norm: &NormStats,
    config: &BcConfig,
) -> Result<(GaussianPolicy, BcTrainLog)> {
    config.validate()?;
    let (Some(sd), Some(ad)) = (expert.state_dim(), expert.action_dim()) else {
        return Err(SbrError::Contract("policy training needs expert data".into()));
    };
    if expert.num_transitions() == 0 {
        return Err(SbrError::Contract("policy training needs expert transitions".into()));
    }
    let samples = build_training_set(config.mode, expert, retrieved, offline, config.decay, config.balance_sources)?;
    let policy = GaussianPolicy::new(sd, ad, &config.hidden, config.activation, config.fixed_std, norm.clone(), config.seed)?;
    let mut trainer = BcTrainer::new(policy, config.lr);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n = samples.len();
    let bs = config.batch_size.min(n);
    let steps = config.steps_per_epoch.unwrap_or(n.div_ceil(bs));
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut log = BcTrainLog {
        mode: config.mode,
        samples: n,
        total_weight: samples.iter().map(|s| s.weight).sum(),
        ..BcTrainLog::default()
    };
    let mut picked: Vec<&BcSample> = Vec::with_capacity(bs);
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for b in 0..steps {
            // Cyclic pass over a reshuffled permutation.
            if cursor >= n {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                cursor = 0;
            }
            let end = (cursor + bs).min(n);
            picked.clear();
            picked.extend(order[cursor..end].iter().map(|&i| &samples[i]));
            cursor = end;
            let batch = BcBatch::new(norm, &picked)?;
            match trainer
                .step(&batch)
                .map_err(|e| SbrError::Divergence(format!("policy ({}) at epoch {epoch}, batch {b}: {e}", config.mode)))?
            {
                Some(l) => {
                    sum += l;
                    count += 1;
                    log.updates += 1;
                }
                None => log.skipped_batches += 1,
            }
        }
        let mean = if count > 0 { sum / count as f64 } else { f64::NAN };
        log::debug!("policy ({}) epoch {epoch}: loss {mean:.6}", config.mode);
        log.epoch_losses.push(mean);
    }
    Ok((trainer.policy, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Step cap below the layout horizon.
    pub horizon: Option<usize>,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 50,
            horizon: None,
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.horizon == Some(0) {
            return Err(SbrError::Config("episodes and horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SbrError::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub disc_returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_disc_return: f64,
    pub std_disc_return: f64,
    pub success_rate: f64,
    pub mean_first_reward: f64,
    pub mean_length: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Rolls out `episodes` independent episodes, each seeded from the config.
pub fn evaluate(actor: &dyn Actor, spec: &PointMazeSpec, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.episodes).map(|_| seeds.next_u64()).collect();
    let max_steps = config.horizon.unwrap_or(spec.horizon).min(spec.horizon);
    let episodes = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rng.set_stream(1);
            rollout_from(spec, reset(spec, s), actor, &mut rng, max_steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let returns: Vec<f64> = episodes.iter().map(|e| e.total_return()).collect();
    let disc: Vec<f64> = episodes.iter().map(|e| e.discounted_return(config.gamma)).collect();
    let (mean_return, std_return) = mean_std(&returns);
    let (mean_disc_return, std_disc_return) = mean_std(&disc);
    let n = episodes.len() as f64;
    Ok(EvalReport {
        episodes: episodes.len(),
        mean_return,
        std_return,
        mean_disc_return,
        std_disc_return,
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        mean_first_reward: episodes.iter().map(|e| e.rewards.first().copied().unwrap_or(0.0)).sum::<f64>() / n,
        mean_length: episodes.iter().map(|e| e.len() as f64).sum::<f64>() / n,
        returns,
        disc_returns: disc,
    })
}

/// `100 (policy - random) / (expert - random)`.
pub fn normalized_score(policy_return: f64, random_return: f64, expert_return: f64) -> Result<f64> {
    let span = expert_return - random_return;
    if !(span.abs() > 1e-12) {
        return Err(SbrError::DegenerateStats { gap: span });
    }
    Ok(100.0 * (policy_return - random_return) / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Source, Trajectory};

    fn toy_policy(fixed_std: bool) -> GaussianPolicy {
        GaussianPolicy::new(3, 2, &[5], Activation::Tanh, fixed_std, NormStats::identity(3, 2), 7).unwrap()
    }

    #[test]
    fn log_prob_at_the_mean_in_two_dims() {
        let p = toy_policy(true);
        let s = [0.3, -0.2, 0.1];
        let mu = p.act(&s).unwrap();
        assert!((p.log_prob(&s, &mu).unwrap() + 1.837_877_066_409_345).abs() < 1e-12);
        let a = [mu[0] + 1.0, mu[1] - 1.0];
        assert!((p.log_prob(&s, &a).unwrap() + 2.837_877_066_409_345).abs() < 1e-12);
    }

    #[test]
    fn loss_is_weighted_mean_of_nll() {
        let mut p = toy_policy(false);
        p.params.get_mut(LOG_STD).unwrap().values_mut().copy_from_slice(&[0.3, -0.4]);
        let samples = [
            BcSample { state: vec![0.1, 0.2, 0.3], action: vec![0.5, -0.5], weight: 1.0 },
            BcSample { state: vec![-1.0, 0.0, 2.0], action: vec![0.0, 1.0], weight: 0.81 },
            BcSample { state: vec![0.4, 0.4, -0.4], action: vec![-0.9, 0.2], weight: 0.0 },
        ];
        let refs: Vec<&BcSample> = samples.iter().collect();
        let batch = BcBatch::new(&p.norm, &refs).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &samples {
            num -= s.weight * p.log_prob(&s.state, &s.action).unwrap();
            den += s.weight;
        }
        assert!((p.bc_loss(&batch).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_batch_is_skipped() {
        let p = toy_policy(false);
        let s = BcSample { state: vec![0.0; 3], action: vec![0.0; 2], weight: 0.0 };
        let batch = BcBatch::new(&p.norm, &[&s]).unwrap();
        let mut tr = BcTrainer::new(p.clone(), 1e-2);
        assert_eq!(tr.step(&batch).unwrap(), None);
        assert_eq!(tr.policy, p);
    }

    #[test]
    fn decay_weights_follow_step() {
        let expert = Dataset::new(vec![Trajectory::new(0, Source::Expert, vec![vec![0.0], vec![1.0]], vec![vec![0.5]]).unwrap()]).unwrap();
        let mk = |step, t| crate::retrieval::RetrievedSample {
            step,
            source: crate::dataset::StateId::new(1, t),
            trigger: crate::dataset::StateId::new(1, t + 1),
            state: vec![t as f64],
            action: vec![0.0],
            next_state: vec![t as f64 + 1.0],
        };
        let set = RetrievedSet::new(vec![vec![mk(0, 0)], vec![], vec![mk(2, 3)]]).unwrap();
        let s = build_training_set(BcMode::Sbr, &expert, Some(&set), &Dataset::empty(), 0.9, false).unwrap();
        let w: Vec<f64> = s.iter().map(|x| x.weight).collect();
        assert_eq!(w, vec![1.0, 1.0, 0.9f64.powi(2)]);
        assert!((w[2] - 0.81).abs() < 1e-15);
        let e = build_training_set(BcMode::BcExp, &expert, Some(&set), &Dataset::empty(), 0.9, false).unwrap();
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn log_std_is_clamped_after_updates() {
        let mut p = toy_policy(false);
        p.params.get_mut(LOG_STD).unwrap().values_mut().copy_from_slice(&[1.999, -4.999]);
        let s = BcSample { state: vec![0.0; 3], action: vec![50.0, 0.0], weight: 1.0 };
        let batch = BcBatch::new(&p.norm, &[&s]).unwrap();
        let mut tr = BcTrainer::new(p, 0.5);
        for _ in 0..5 {
            tr.step(&batch).unwrap();
        }
        let ls = tr.policy.log_std();
        assert!(ls.iter().all(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)));
    }

    #[test]
    fn normalized_score_endpoints() {
        assert_eq!(normalized_score(110.0, 10.0, 110.0).unwrap(), 100.0);
        assert_eq!(normalized_score(10.0, 10.0, 110.0).unwrap(), 0.0);
        assert_eq!(normalized_score(60.0, 10.0, 110.0).unwrap(), 50.0);
        assert!(normalized_score(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = toy_policy(false);
        let ck = p.to_checkpoint(7).unwrap();
        let back = GaussianPolicy::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
