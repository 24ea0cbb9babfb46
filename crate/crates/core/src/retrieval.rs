//! Backward retrieval of offline transitions that lead into the expert
//! state distribution.
//!
//! Step 0 scores every offline state with the criterion `F` against the
//! expert states. Whenever `s_t` scores above `delta`, the transition
//! leaving `s_{t-1}` becomes a candidate; candidates whose own source
//! already scores above `delta` are dropped, since those sources are
//! expert-like by themselves. Later steps repeat the search with the
//! sources retrieved so far moved from the offline side to the expert side,
//! which walks the retrieval one transition further back each time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StateId, Transition};
use crate::error::{Result, SbrError};
use crate::similarity::{CriterionStats, SimilarityIndex};
use crate::world_model::StateEncoder;

pub const RETRIEVED_FORMAT: &str = "sbr-retrieved-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// Threshold on `F`.
    pub delta: f64,
    /// Number of search steps.
    pub k: usize,
    /// Recompute `S+`/`S-` against each step's sides. When false the step-0
    /// statistics are reused.
    pub recompute_stats_each_step: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            delta: 0.9,
            k: 3,
            recompute_stats_each_step: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SbrError::Config(format!("retrieval delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.k == 0 {
            return Err(SbrError::Config("retrieval needs at least one step (k >= 1)".into()));
        }
        Ok(())
    }
}

/// One retrieved transition `source -> source + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievedSample {
    pub step: usize,
    pub source: StateId,
    /// The successor state whose score triggered the retrieval.
    pub trigger: StateId,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl RetrievedSample {
    pub fn transition(&self) -> Transition {
        Transition {
            state: self.state.clone(),
            action: self.action.clone(),
            next_state: self.next_state.clone(),
        }
    }
}

/// Per-step retrieved samples, each list in source order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    steps: Vec<Vec<RetrievedSample>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrievedHeader {
    format: String,
    steps: usize,
}

impl RetrievedSet {
    pub fn new(steps: Vec<Vec<RetrievedSample>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (k, list) in steps.iter().enumerate() {
            for s in list {
                if s.step != k {
                    return Err(SbrError::Contract(format!("sample {} tagged step {} stored at step {k}", s.source, s.step)));
                }
                if !seen.insert(s.source) {
                    return Err(SbrError::Contract(format!("state {} retrieved twice", s.source)));
                }
            }
        }
        Ok(RetrievedSet { steps })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, k: usize) -> &[RetrievedSample] {
        self.steps.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn steps(&self) -> &[Vec<RetrievedSample>] {
        &self.steps
    }

    /// All samples, by step then source.
    pub fn samples(&self) -> impl Iterator<Item = &RetrievedSample> + '_ {
        self.steps.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_ids(&self) -> BTreeSet<StateId> {
        self.samples().map(|s| s.source).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&RetrievedHeader {
            format: RETRIEVED_FORMAT.into(),
            steps: self.steps.len(),
        })?;
        out.push('\n');
        for s in self.samples() {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: RetrievedHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| SbrError::Parse { line: 1, msg: e.to_string() })?,
            None => return Err(SbrError::Parse { line: 1, msg: "missing header".into() }),
        };
        if header.format != RETRIEVED_FORMAT {
            return Err(SbrError::Schema(format!("expected format {RETRIEVED_FORMAT}, found {}", header.format)));
        }
        let mut steps = vec![Vec::new(); header.steps];
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: RetrievedSample =
                serde_json::from_str(&line).map_err(|e| SbrError::Parse { line: i + 1, msg: e.to_string() })?;
            let slot = steps.get_mut(s.step).ok_or_else(|| SbrError::Parse {
                line: i + 1,
                msg: format!("step {} beyond declared {}", s.step, header.steps),
            })?;
            slot.push(s);
        }
        RetrievedSet::new(steps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        RetrievedSet::from_jsonl(BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub expert_side: usize,
    pub offline_side: usize,
    /// Statistics used by this step, absent when the step was skipped.
    pub stats: Option<CriterionStats>,
    /// Offline states scoring above `delta` (with a predecessor).
    pub candidates: usize,
    /// Candidates whose predecessor is still on the offline side.
    pub added: usize,
    /// Added transitions dropped because their source scores above `delta`.
    pub removed: usize,
    pub retained: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub delta: f64,
    pub k: usize,
    pub recompute_stats_each_step: bool,
    pub steps: Vec<StepReport>,
    pub total: usize,
    pub wall_time_ms: f64,
}

impl SearchReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Latents of both datasets, computed once per search.
struct Encoded<'a> {
    offline: &'a Dataset,
    expert_ids: Vec<StateId>,
    expert_z: Vec<Vec<f64>>,
    offline_ids: Vec<StateId>,
    offline_z: Vec<Vec<f64>>,
    offline_pos: BTreeMap<StateId, usize>,
}

fn encode_all(data: &Dataset, encoder: &dyn StateEncoder) -> Result<(Vec<StateId>, Vec<Vec<f64>>)> {
    let ids: Vec<StateId> = data.state_ids().collect();
    let states: Vec<&[f64]> = data.iter().flat_map(|tr| tr.states.iter().map(Vec::as_slice)).collect();
    let z = encoder.encode_states(&states)?;
    if z.len() != ids.len() {
        return Err(SbrError::dim("encoded states", ids.len(), z.len()));
    }
    Ok((ids, z))
}

impl<'a> Encoded<'a> {
    fn new(expert: &Dataset, offline: &'a Dataset, encoder: &dyn StateEncoder) -> Result<Self> {
        if let (Some(de), Some(dof)) = (expert.state_dim(), offline.state_dim()) {
            if de != dof {
                return Err(SbrError::dim("offline state dimension", de, dof));
            }
        }
        let (expert_ids, expert_z) = encode_all(expert, encoder)?;
        let (offline_ids, offline_z) = encode_all(offline, encoder)?;
        let offline_pos = offline_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Ok(Encoded {
            offline,
            expert_ids,
            expert_z,
            offline_ids,
            offline_z,
            offline_pos,
        })
    }

    /// Expert side for a step: expert states plus previously retrieved sources.
    fn expert_side(&self, retrieved: &BTreeSet<StateId>) -> Result<SimilarityIndex> {
        let mut ids = self.expert_ids.clone();
        let mut z = self.expert_z.clone();
        for id in retrieved {
            let i = self.offline_pos[id];
            ids.push(*id);
            z.push(self.offline_z[i].clone());
        }
        SimilarityIndex::new(z, ids)
    }

    /// Best-expert similarity of every offline state still on the offline side.
    fn offline_scores(&self, index: &SimilarityIndex, retrieved: &BTreeSet<StateId>) -> Result<Vec<Option<f64>>> {
        let active: Vec<usize> = (0..self.offline_ids.len())
            .filter(|&i| !retrieved.contains(&self.offline_ids[i]))
            .collect();
        let queries: Vec<Vec<f64>> = active.iter().map(|&i| self.offline_z[i].clone()).collect();
        let sims = index.max_similarities(&queries)?;
        let mut out = vec![None; self.offline_ids.len()];
        for (i, (s, _)) in active.into_iter().zip(sims) {
            out[i] = Some(s);
        }
        Ok(out)
    }

    fn step_stats(&self, retrieved: &BTreeSet<StateId>) -> Result<CriterionStats> {
        let index = self.expert_side(retrieved)?;
        let sims: Vec<f64> = self.offline_scores(&index, retrieved)?.into_iter().flatten().collect();
        CriterionStats::from_max_similarities(&sims)
    }

    fn search_step(
        &self,
        k: usize,
        retrieved: &BTreeSet<StateId>,
        config: &RetrievalConfig,
        fixed_stats: Option<CriterionStats>,
    ) -> Result<(Vec<RetrievedSample>, StepReport)> {
        let mut report = StepReport {
            step: k,
            expert_side: self.expert_ids.len() + retrieved.len(),
            offline_side: self.offline_ids.len() - retrieved.len(),
            ..StepReport::default()
        };
        let skip = |report: StepReport, why: String| -> Result<(Vec<RetrievedSample>, StepReport)> {
            if k == 0 {
                return Err(SbrError::Contract(why));
            }
            log::warn!("retrieval step {k} skipped: {why}");
            Ok((Vec::new(), StepReport { degenerate: true, ..report }))
        };
        if report.expert_side == 0 || report.offline_side == 0 {
            return skip(report, "expert or offline side is empty".into());
        }

        let index = self.expert_side(retrieved)?;
        let scores = self.offline_scores(&index, retrieved)?;
        let stats = match fixed_stats {
            Some(s) => s,
            None => match CriterionStats::from_max_similarities(&scores.iter().flatten().copied().collect::<Vec<_>>()) {
                Ok(s) => s,
                Err(e @ SbrError::DegenerateStats { .. }) if k > 0 => {
                    return skip(report, e.to_string());
                }
                Err(e) => return Err(e),
            },
        };
        report.stats = Some(stats);
        let f: Vec<Option<f64>> = scores.iter().map(|s| s.map(|m| stats.normalize(m))).collect();

        let mut samples = Vec::new();
        for (i, id) in self.offline_ids.iter().enumerate() {
            let Some(fi) = f[i] else { continue };
            if id.t == 0 || fi <= config.delta {
                continue;
            }
            report.candidates += 1;
            let source = StateId::new(id.traj_id, id.t - 1);
            // The predecessor shares the trajectory, so it sits right before.
            let Some(fs) = f[i - 1] else { continue };
            debug_assert_eq!(self.offline_ids[i - 1], source);
            report.added += 1;
            if fs > config.delta {
                report.removed += 1;
                continue;
            }
            let tr = self
                .offline
                .get(source.traj_id)
                .expect("offline ids come from the dataset")
                .transition(source.t);
            samples.push(RetrievedSample {
                step: k,
                source,
                trigger: *id,
                state: tr.state,
                action: tr.action,
                next_state: tr.next_state,
            });
        }
        report.retained = samples.len();
        Ok((samples, report))
    }
}

/// First search step against the expert states alone.
pub fn retrieval_step_0(
    expert: &Dataset,
    offline: &Dataset,
    encoder: &dyn StateEncoder,
    config: &RetrievalConfig,
) -> Result<(Vec<RetrievedSample>, StepReport)> {
    config.validate()?;
    let enc = Encoded::new(expert, offline, encoder)?;
    enc.search_step(0, &BTreeSet::new(), config, None)
}

/// The search step following the steps already in `prior`.
pub fn retrieval_step_k(
    expert: &Dataset,
    offline: &Dataset,
    encoder: &dyn StateEncoder,
    config: &RetrievalConfig,
    prior: &RetrievedSet,
) -> Result<(Vec<RetrievedSample>, StepReport)> {
    config.validate()?;
    let k = prior.num_steps();
    let enc = Encoded::new(expert, offline, encoder)?;
    let retrieved = prior.source_ids();
    for id in &retrieved {
        if !enc.offline_pos.contains_key(id) {
            return Err(SbrError::Contract(format!("retrieved state {id} is not in the offline dataset")));
        }
    }
    let fixed = if k > 0 && !config.recompute_stats_each_step {
        Some(enc.step_stats(&BTreeSet::new())?)
    } else {
        None
    };
    enc.search_step(k, &retrieved, config, fixed)
}

/// Runs all `k` search steps. An empty offline dataset yields an empty set.
pub fn run_retrieval(
    expert: &Dataset,
    offline: &Dataset,
    encoder: &dyn StateEncoder,
    config: &RetrievalConfig,
) -> Result<(RetrievedSet, SearchReport)> {
    config.validate()?;
    let started = Instant::now();
    let mut report = SearchReport {
        delta: config.delta,
        k: config.k,
        recompute_stats_each_step: config.recompute_stats_each_step,
        ..SearchReport::default()
    };
    if offline.num_states() == 0 {
        log::warn!("offline dataset is empty; nothing to retrieve");
        report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        return Ok((RetrievedSet::new(vec![Vec::new(); config.k])?, report));
    }
    if expert.num_states() == 0 {
        return Err(SbrError::Contract("retrieval needs at least one expert state".into()));
    }

    let enc = Encoded::new(expert, offline, encoder)?;
    let mut retrieved = BTreeSet::new();
    let mut steps = Vec::with_capacity(config.k);
    let mut step0_stats = None;
    for k in 0..config.k {
        let fixed = if config.recompute_stats_each_step { None } else { step0_stats };
        let (samples, step_report) = enc.search_step(k, &retrieved, config, fixed)?;
        if k == 0 {
            step0_stats = step_report.stats;
        }
        log::info!(
            "retrieval step {k}: {} candidates, {} added, {} pruned, {} kept",
            step_report.candidates,
            step_report.added,
            step_report.removed,
            step_report.retained
        );
        retrieved.extend(samples.iter().map(|s| s.source));
        report.steps.push(step_report);
        steps.push(samples);
    }
    let set = RetrievedSet::new(steps)?;
    report.total = set.len();
    report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((set, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Source, Trajectory};
    use crate::world_model::IdentityEncoder;

    fn traj(id: u64, source: Source, xs: &[f64]) -> Trajectory {
        let states = xs.iter().map(|&x| vec![x]).collect();
        let actions = vec![vec![0.0]; xs.len() - 1];
        Trajectory::new(id, source, states, actions).unwrap()
    }

    fn chain() -> (Dataset, Dataset) {
        let expert = Dataset::new(vec![traj(0, Source::Expert, &[0.0, 1.0, 2.0])]).unwrap();
        let offline = Dataset::new(vec![
            traj(1, Source::Offline, &[5.0, 1.0]),
            traj(2, Source::Offline, &[9.0, 5.02]),
        ])
        .unwrap();
        (expert, offline)
    }

    #[test]
    fn chain_walks_back_one_transition_per_step() {
        let (expert, offline) = chain();
        let cfg = RetrievalConfig { delta: 0.9, k: 2, ..Default::default() };
        let (set, report) = run_retrieval(&expert, &offline, &IdentityEncoder { dim: 1 }, &cfg).unwrap();
        assert_eq!(set.step(0).iter().map(|s| s.source).collect::<Vec<_>>(), vec![StateId::new(1, 0)]);
        assert_eq!(set.step(1).iter().map(|s| s.source).collect::<Vec<_>>(), vec![StateId::new(2, 0)]);
        let s0 = report.steps[0].stats.unwrap();
        assert_eq!((s0.s_plus, s0.s_minus), (0.0, -7.0));
        let s1 = report.steps[1].stats.unwrap();
        assert_eq!((s1.s_plus, s1.s_minus), (0.0, -4.0));
        assert_eq!(set.step(1)[0].trigger, StateId::new(2, 1));
    }

    #[test]
    fn step_zero_needs_both_sides() {
        let (expert, _) = chain();
        let cfg = RetrievalConfig::default();
        let r = retrieval_step_0(&expert, &Dataset::empty(), &IdentityEncoder { dim: 1 }, &cfg);
        assert!(matches!(r, Err(SbrError::Contract(_))));
        let (set, _) = run_retrieval(&expert, &Dataset::empty(), &IdentityEncoder { dim: 1 }, &cfg).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let (expert, offline) = chain();
        let cfg = RetrievalConfig { k: 2, ..Default::default() };
        let (set, _) = run_retrieval(&expert, &offline, &IdentityEncoder { dim: 1 }, &cfg).unwrap();
        let text = set.to_jsonl().unwrap();
        assert_eq!(RetrievedSet::from_jsonl(text.as_bytes()).unwrap(), set);
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig { delta: 1.5, ..Default::default() }.validate().is_err());
        assert!(RetrievalConfig { k: 0, ..Default::default() }.validate().is_err());
    }
}
