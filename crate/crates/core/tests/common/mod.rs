//! Test-only oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbr::dataset::{Dataset, Source, StateId, Trajectory};
use sbr::similarity::similarity;

pub type StepSets = Vec<BTreeSet<(StateId, StateId)>>;

/// Naive re-implementation of the backward search over raw states (identity
/// latents). Returns `(source, trigger)` pairs per step, or `None` when the
/// first step has no usable normalization.
pub fn oracle_retrieval(expert: &Dataset, offline: &Dataset, delta: f64, k: usize, recompute: bool) -> Option<StepSets> {
    if offline.num_states() == 0 {
        return Some(vec![BTreeSet::new(); k]);
    }
    let mut taken: BTreeSet<StateId> = BTreeSet::new();
    let mut out = Vec::new();
    let mut first_stats: Option<(f64, f64)> = None;
    for step in 0..k {
        let mut expert_side: Vec<Vec<f64>> = Vec::new();
        for tr in expert.iter() {
            for s in &tr.states {
                expert_side.push(s.clone());
            }
        }
        for id in &taken {
            expert_side.push(offline.state(*id).unwrap().to_vec());
        }
        let mut offline_side: Vec<(StateId, Vec<f64>)> = Vec::new();
        for tr in offline.iter() {
            for (t, s) in tr.states.iter().enumerate() {
                let id = StateId::new(tr.traj_id, t);
                if !taken.contains(&id) {
                    offline_side.push((id, s.clone()));
                }
            }
        }
        if expert_side.is_empty() || offline_side.is_empty() {
            if step == 0 {
                return None;
            }
            out.push(BTreeSet::new());
            continue;
        }
        let best = |x: &[f64]| {
            let mut m = f64::NEG_INFINITY;
            for e in &expert_side {
                let s = similarity(e, x).unwrap();
                if s > m {
                    m = s;
                }
            }
            m
        };
        let (sp, sm) = match (step, recompute, first_stats) {
            (s, false, Some(st)) if s > 0 => st,
            _ => {
                let mut sp = f64::NEG_INFINITY;
                let mut sm = f64::INFINITY;
                for (_, x) in &offline_side {
                    let b = best(x);
                    if b > sp {
                        sp = b;
                    }
                    if b < sm {
                        sm = b;
                    }
                }
                if sp - sm < 1e-9 {
                    if step == 0 {
                        return None;
                    }
                    out.push(BTreeSet::new());
                    continue;
                }
                (sp, sm)
            }
        };
        if step == 0 {
            first_stats = Some((sp, sm));
        }
        let f = |x: &[f64]| (best(x) - sm) / (sp - sm);
        let mut found = BTreeSet::new();
        for (id, x) in &offline_side {
            if id.t == 0 || f(x) <= delta {
                continue;
            }
            let src = StateId::new(id.traj_id, id.t - 1);
            if taken.contains(&src) {
                continue;
            }
            if f(offline.state(src).unwrap()) <= delta {
                found.insert((src, *id));
            }
        }
        for (src, _) in &found {
            taken.insert(*src);
        }
        out.push(found);
    }
    Some(out)
}

pub fn line_traj(id: u64, source: Source, xs: &[f64]) -> Trajectory {
    let states = xs.iter().map(|&x| vec![x]).collect();
    let actions = vec![vec![0.0]; xs.len() - 1];
    Trajectory::new(id, source, states, actions).unwrap()
}

/// Random walk trajectories in `dim` dimensions with `1..=max_len` transitions.
pub fn random_dataset(rng: &mut ChaCha8Rng, first_id: u64, count: usize, max_len: usize, dim: usize, source: Source) -> Dataset {
    let mut trajs = Vec::new();
    for i in 0..count {
        let len = rng.random_range(1..=max_len);
        let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut states = vec![x.clone()];
        let mut actions = Vec::new();
        for _ in 0..len {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += ai;
            }
            states.push(x.clone());
            actions.push(a);
        }
        trajs.push(Trajectory::new(first_id + i as u64, source, states, actions).unwrap());
    }
    Dataset::new(trajs).unwrap()
}

pub struct TinyInstance {
    pub expert: Dataset,
    pub offline: Dataset,
    pub dim: usize,
    pub delta: f64,
    pub k: usize,
}

pub fn tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=2);
    let n_exp = rng.random_range(1..=2);
    let n_off = rng.random_range(1..=5);
    let expert = random_dataset(&mut rng, 0, n_exp, 10, dim, Source::Expert);
    let offline = random_dataset(&mut rng, 100, n_off, 10, dim, Source::Offline);
    let delta = [0.5, 0.7, 0.9][rng.random_range(0..3)];
    let k = [1, 2, 4][rng.random_range(0..3)];
    TinyInstance { expert, offline, dim, delta, k }
}

pub fn chain_instance() -> (Dataset, Dataset) {
    let expert = Dataset::new(vec![line_traj(0, Source::Expert, &[0.0, 1.0, 2.0])]).unwrap();
    let offline = Dataset::new(vec![
        line_traj(1, Source::Offline, &[5.0, 1.0]),
        line_traj(2, Source::Offline, &[9.0, 5.02]),
    ])
    .unwrap();
    (expert, offline)
}

/// Every offline transition as a retrieved sample, spread over `k` steps by
/// time index.
pub fn offline_as_retrieved(offline: &Dataset, k: usize) -> sbr::retrieval::RetrievedSet {
    let mut steps = vec![Vec::new(); k];
    for tr in offline.iter() {
        for t in 0..tr.len() {
            steps[t % k].push(sbr::retrieval::RetrievedSample {
                step: t % k,
                source: StateId::new(tr.traj_id, t),
                trigger: StateId::new(tr.traj_id, t + 1),
                state: tr.states[t].clone(),
                action: tr.actions[t].clone(),
                next_state: tr.states[t + 1].clone(),
            });
        }
    }
    sbr::retrieval::RetrievedSet::new(steps).unwrap()
}
