//! Trajectory data model, the JSON-lines dataset format, windowed iteration
//! and normalization statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SbrError};

pub const DATASET_FORMAT: &str = "sbr-traj-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Offline,
}

/// Identity of one state: trajectory id and time index. The terminal
/// next-state of a trajectory of length `L` has index `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId {
    pub traj_id: u64,
    pub t: usize,
}

impl StateId {
    pub fn new(traj_id: u64, t: usize) -> Self {
        StateId { traj_id, t }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.traj_id, self.t)
    }
}

/// An owned `(s, a, s')` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

/// A chained sequence of transitions. Stored as `len + 1` states and `len`
/// actions so that `next_state(t) == state(t + 1)` holds by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub traj_id: u64,
    pub source: Source,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        traj_id: u64,
        source: Source,
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let t = Trajectory {
            traj_id,
            source,
            states,
            actions,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let id = self.traj_id;
        if self.actions.is_empty() {
            return Err(SbrError::Schema(format!("trajectory {id} has no transitions")));
        }
        if self.states.len() != self.actions.len() + 1 {
            return Err(SbrError::Schema(format!(
                "trajectory {id}: {} states for {} actions (need actions + 1)",
                self.states.len(),
                self.actions.len()
            )));
        }
        let sd = self.states[0].len();
        let ad = self.actions[0].len();
        for (t, s) in self.states.iter().enumerate() {
            if s.len() != sd {
                return Err(SbrError::Schema(format!(
                    "trajectory {id}: state {t} has dim {} (expected {sd})",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(SbrError::Schema(format!("trajectory {id}: state {t} is not finite")));
            }
        }
        for (t, a) in self.actions.iter().enumerate() {
            if a.len() != ad {
                return Err(SbrError::Schema(format!(
                    "trajectory {id}: action {t} has dim {} (expected {ad})",
                    a.len()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(SbrError::Schema(format!("trajectory {id}: action {t} is not finite")));
            }
        }
        Ok(())
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn transition(&self, t: usize) -> Transition {
        Transition {
            state: self.states[t].clone(),
            action: self.actions[t].clone(),
            next_state: self.states[t + 1].clone(),
        }
    }

    pub fn state_ids(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.states.len()).map(move |t| StateId::new(self.traj_id, t))
    }
}

/// Contiguous `(s, a, s')_{0:H}` slice of one trajectory.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub traj_id: u64,
    pub start: usize,
    /// `H + 2` states: `s_0 .. s_{H+1}`.
    pub states: &'a [Vec<f64>],
    /// `H + 1` actions: `a_0 .. a_H`.
    pub actions: &'a [Vec<f64>],
}

impl Window<'_> {
    pub fn horizon(&self) -> usize {
        self.actions.len() - 1
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatHeader {
    format: String,
}

/// A set of trajectories with unique ids and consistent dimensions.
///
/// Trajectories are kept sorted by id so every iteration over a dataset is
/// independent of the order records appeared in a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    index: BTreeMap<u64, usize>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut trajectories: Vec<Trajectory>) -> Result<Self> {
        trajectories.sort_by_key(|t| t.traj_id);
        let mut index = BTreeMap::new();
        for (i, t) in trajectories.iter().enumerate() {
            t.validate()?;
            if index.insert(t.traj_id, i).is_some() {
                return Err(SbrError::Schema(format!("duplicate traj_id {}", t.traj_id)));
            }
        }
        if let Some(first) = trajectories.first() {
            let (sd, ad) = (first.state_dim(), first.action_dim());
            for t in &trajectories {
                if t.state_dim() != sd || t.action_dim() != ad {
                    return Err(SbrError::Schema(format!(
                        "trajectory {} has dims ({}, {}), dataset uses ({sd}, {ad})",
                        t.traj_id,
                        t.state_dim(),
                        t.action_dim()
                    )));
                }
            }
        }
        Ok(Dataset {
            trajectories,
            index,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn num_states(&self) -> usize {
        self.trajectories.iter().map(|t| t.states.len()).sum()
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.trajectories.first().map(Trajectory::state_dim)
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.trajectories.first().map(Trajectory::action_dim)
    }

    pub fn get(&self, traj_id: u64) -> Option<&Trajectory> {
        self.index.get(&traj_id).map(|&i| &self.trajectories[i])
    }

    pub fn state(&self, id: StateId) -> Option<&[f64]> {
        self.get(id.traj_id)?.states.get(id.t).map(Vec::as_slice)
    }

    /// Every state id in `(traj_id, t)` order.
    pub fn state_ids(&self) -> impl Iterator<Item = StateId> + '_ {
        self.trajectories.iter().flat_map(Trajectory::state_ids)
    }

    pub fn filter_source(&self, source: Source) -> Dataset {
        let trajectories: Vec<_> = self
            .trajectories
            .iter()
            .filter(|t| t.source == source)
            .cloned()
            .collect();
        Dataset::new(trajectories).expect("subset of a valid dataset is valid")
    }

    /// `(expert, offline)` partition.
    pub fn split_by_source(&self) -> (Dataset, Dataset) {
        (self.filter_source(Source::Expert), self.filter_source(Source::Offline))
    }

    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        let mut all = self.trajectories.clone();
        all.extend(other.trajectories.iter().cloned());
        Dataset::new(all)
    }

    /// Every contiguous window of `horizon + 1` transitions, trajectory by
    /// trajectory. A trajectory of length `L` yields `max(0, L - horizon)`.
    pub fn windows(&self, horizon: usize) -> impl Iterator<Item = Window<'_>> + '_ {
        self.trajectories.iter().flat_map(move |traj| {
            let count = traj.len().saturating_sub(horizon);
            (0..count).map(move |start| Window {
                traj_id: traj.traj_id,
                start,
                states: &traj.states[start..start + horizon + 2],
                actions: &traj.actions[start..start + horizon + 1],
            })
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&FormatHeader {
            format: DATASET_FORMAT.to_string(),
        })?;
        out.push('\n');
        for t in &self.trajectories {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(SbrError::Parse {
                    line: 1,
                    msg: "missing format header".into(),
                })
            }
        };
        let header: FormatHeader = serde_json::from_str(&header).map_err(|e| SbrError::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != DATASET_FORMAT {
            return Err(SbrError::Parse {
                line: 1,
                msg: format!("unsupported dataset format `{}`", header.format),
            });
        }
        let mut trajectories = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line).map_err(|e| SbrError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            t.validate().map_err(|e| SbrError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            trajectories.push(t);
        }
        Dataset::new(trajectories)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_jsonl(BufReader::new(fs::File::open(path)?))
    }
}

/// Per-dimension mean and (floored) population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize, what: &str) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        n += 1;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let sd = (s / n as f64).sqrt();
            if sd < STD_FLOOR {
                log::warn!("{what} dimension {d} is constant (std {sd:e}); flooring at {STD_FLOOR:e}");
                STD_FLOOR
            } else {
                sd
            }
        })
        .collect();
    (mean, std)
}

impl NormStats {
    /// Statistics over every state and action of the given datasets,
    /// accumulated in `traj_id` order.
    pub fn compute(datasets: &[&Dataset]) -> Result<NormStats> {
        let mut trajs: Vec<&Trajectory> = datasets.iter().flat_map(|d| d.iter()).collect();
        if trajs.is_empty() {
            return Err(SbrError::Contract("normalization needs a non-empty dataset".into()));
        }
        trajs.sort_by_key(|t| t.traj_id);
        let (sd, ad) = (trajs[0].state_dim(), trajs[0].action_dim());
        if let Some(t) = trajs.iter().find(|t| t.state_dim() != sd || t.action_dim() != ad) {
            return Err(SbrError::Schema(format!(
                "trajectory {} disagrees on dimensions",
                t.traj_id
            )));
        }
        let states = trajs.iter().flat_map(|t| t.states.iter().map(Vec::as_slice));
        let actions = trajs.iter().flat_map(|t| t.actions.iter().map(Vec::as_slice));
        let (state_mean, state_std) = mean_std(states, sd, "state");
        let (action_mean, action_std) = mean_std(actions, ad, "action");
        Ok(NormStats {
            state_mean,
            state_std,
            action_mean,
            action_std,
        })
    }

    /// Mean 0 / std 1 statistics that leave data untouched.
    pub fn identity(state_dim: usize, action_dim: usize) -> NormStats {
        NormStats {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mean.len()
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((v, m), sd)| (v - m) / sd)
            .collect()
    }

    pub fn denormalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((v, m), sd)| v * sd + m)
            .collect()
    }

    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(&self.action_mean)
            .zip(&self.action_std)
            .map(|((v, m), sd)| (v - m) / sd)
            .collect()
    }

    pub fn denormalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(&self.action_mean)
            .zip(&self.action_std)
            .map(|((v, m), sd)| v * sd + m)
            .collect()
    }

    /// Copy of `data` with every state normalized; actions are left as-is.
    pub fn normalize_states_of(&self, data: &Dataset) -> Dataset {
        let trajectories = data
            .iter()
            .map(|t| Trajectory {
                traj_id: t.traj_id,
                source: t.source,
                states: t.states.iter().map(|s| self.normalize_state(s)).collect(),
                actions: t.actions.clone(),
            })
            .collect();
        Dataset::new(trajectories).expect("normalization preserves validity")
    }
}
