//! Gradient and stop-gradient checks shared by the nn and acceptance suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbr::dataset::{Dataset, NormStats, Source, StateId, Trajectory};
use sbr::nn::{grad_check, Activation, Graph, Mlp, MlpSpec, ParamStore, TensorBuf};
use sbr::policy::{BcBatch, BcSample, GaussianPolicy};
use sbr::similarity::{compute_stats, criterion_f, similarity, SimilarityIndex};
use sbr::world_model::{ConsistencyTarget, RolloutMode, WmConfig, WorldModel};

pub const GRAD_EPS: f64 = 1e-6;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TensorBuf {
    TensorBuf::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random 2-4 layer MLP under a squared-error loss; returns the worst
/// relative gradient error.
pub fn mlp_grad_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(2..=4);
    let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=5)).collect();
    let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    let mlp = Mlp::new(MlpSpec::new(widths.clone(), act).unwrap(), "m").unwrap();
    let mut params = ParamStore::new();
    mlp.init(&mut params, &mut rng);
    let n = rng.random_range(1..=4);
    let x = random_matrix(&mut rng, n, widths[0]);
    let y = random_matrix(&mut rng, n, *widths.last().unwrap());
    grad_check(&params, GRAD_EPS, |g| {
        let xi = g.input(x.clone());
        let yi = g.input(y.clone());
        let out = mlp.forward_graph(g, xi)?;
        let d = g.sub(out, yi)?;
        let sq = g.square(d);
        Ok(g.sum(sq))
    })
    .unwrap()
}

/// Small random trajectories with 2-D states and actions.
pub fn random_trajectories(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Dataset {
    let trajs = (0..count)
        .map(|i| {
            let states: Vec<Vec<f64>> = (0..=len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let actions: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            Trajectory::new(i as u64, Source::Offline, states, actions).unwrap()
        })
        .collect();
    Dataset::new(trajs).unwrap()
}

pub fn small_world_model(mode: RolloutMode, seed: u64) -> WorldModel {
    let cfg = WmConfig {
        latent_dim: 3,
        hidden: vec![4],
        horizon: 3,
        decay: 0.8,
        rollout_mode: mode,
        seed,
        ..WmConfig::default()
    };
    WorldModel::new(cfg, 2, 2, NormStats::identity(2, 2)).unwrap()
}

/// World-model loss over a batch of windows of horizon `h`. The consistency
/// target is inserted as a constant so finite differences see the same
/// function the stop-gradient graph differentiates.
pub fn wm_grad_error(h: usize, mode: RolloutMode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = random_trajectories(&mut rng, 2, h + 3);
    let windows: Vec<_> = data.windows(h).take(3).collect();
    let wm = small_world_model(mode, seed);
    grad_check(&wm.params, GRAD_EPS, |g| wm.loss_graph(g, &windows, ConsistencyTarget::Constant)).unwrap()
}

pub fn bc_grad_error(seed: u64, fixed_std: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = GaussianPolicy::new(3, 2, &[5], Activation::Tanh, fixed_std, NormStats::identity(3, 2), seed).unwrap();
    if let Some(ls) = policy.params.get_mut("log_std") {
        for v in ls.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let samples: Vec<BcSample> = (0..6)
        .map(|_| BcSample {
            state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            weight: rng.random_range(0.1..1.0),
        })
        .collect();
    let refs: Vec<&BcSample> = samples.iter().collect();
    let batch = BcBatch::new(&policy.norm, &refs).unwrap();
    grad_check(&policy.params, GRAD_EPS, |g| policy.loss_graph(g, &batch)).unwrap()
}

/// Gradients of the stop-gradient graph and of the constant-substitution
/// graph on one random window, for both rollout modes.
pub fn stop_gradient_matches_constant(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(0..=3);
    let data = random_trajectories(&mut rng, 1, h + 1);
    let windows: Vec<_> = data.windows(h).take(1).collect();
    [RolloutMode::OpenLoop, RolloutMode::TeacherForced].into_iter().all(|mode| {
        let wm = small_world_model(mode, seed);
        let grads = |target| {
            let mut g = Graph::new(&wm.params);
            let l = wm.loss_graph(&mut g, &windows, target).unwrap();
            (g.scalar(l).unwrap(), g.backward(l).unwrap())
        };
        let (ls, gs) = grads(ConsistencyTarget::StopGradient);
        let (lc, gc) = grads(ConsistencyTarget::Constant);
        ls.to_bits() == lc.to_bits()
            && gs.names().all(|n| {
                let a = gs.get(n).unwrap().values();
                let b = gc.get(n).unwrap().values();
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    })
}

/// Symmetry, non-positivity and zero self-similarity over `pairs` random
/// latent pairs of random dimension.
pub fn similarity_pair_violations(seed: u64, pairs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .filter(|_| {
            let d = rng.random_range(1..=8);
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
            let ab = similarity(&a, &b).unwrap();
            let ba = similarity(&b, &a).unwrap();
            ab.to_bits() != ba.to_bits() || ab > 0.0 || similarity(&a, &a).unwrap() != 0.0
        })
        .count()
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian-ish matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    q
}

fn rotate(q: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

pub struct CriterionCheck {
    pub in_range: bool,
    pub endpoints_attained: bool,
    pub oracle_agrees: bool,
    pub max_rotation_delta: f64,
}

fn f_values(expert: &[Vec<f64>], offline: &[Vec<f64>]) -> Vec<f64> {
    let ids = (0..expert.len()).map(|t| StateId::new(0, t)).collect();
    let index = SimilarityIndex::new(expert.to_vec(), ids).unwrap();
    let stats = compute_stats(&index, offline).unwrap();
    offline.iter().map(|z| criterion_f(&stats, &index, z).unwrap()).collect()
}

/// F over a random expert/offline latent population, checked against a
/// brute-force oracle and against the same population under a random
/// orthogonal map.
pub fn criterion_check(seed: u64) -> CriterionCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=6);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
    };
    let ne = rng.random_range(1..=15);
    let no = rng.random_range(2..=40);
    let expert = draw(ne, &mut rng);
    let offline = draw(no, &mut rng);

    let f = f_values(&expert, &offline);
    let best: Vec<f64> = offline
        .iter()
        .map(|z| expert.iter().map(|e| -e.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let hi = best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = best.iter().copied().fold(f64::INFINITY, f64::min);
    let oracle: Vec<f64> = best.iter().map(|m| (m - lo) / (hi - lo)).collect();

    let q = random_orthogonal(&mut rng, d);
    let re: Vec<Vec<f64>> = expert.iter().map(|z| rotate(&q, z)).collect();
    let ro: Vec<Vec<f64>> = offline.iter().map(|z| rotate(&q, z)).collect();
    let fr = f_values(&re, &ro);

    CriterionCheck {
        in_range: f.iter().all(|v| (0.0..=1.0).contains(v)),
        endpoints_attained: f.contains(&0.0) && f.contains(&1.0),
        oracle_agrees: f.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12),
        max_rotation_delta: f.iter().zip(&fr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
    }
}

fn bits(v: &[Vec<f64>]) -> Vec<u64> {
    v.iter().flatten().map(|x| x.to_bits()).collect()
}

/// Which artifacts fail to round-trip through their files in `dir`: every
/// float must survive bit for bit and re-saving must reproduce the bytes.
pub fn persistence_failures(dir: &std::path::Path) -> Vec<&'static str> {
    use sbr::envs::{generate_dataset, GeneratorKind, GeneratorSpec, PointMazeSpec};
    use sbr::world_model::{train_world_model, StateEncoder};

    let mut failed = Vec::new();
    let spec = PointMazeSpec::builtin("umaze").unwrap().with_noise_dims(3);
    let gens = [GeneratorSpec::new(GeneratorKind::Expert, 2, 1), GeneratorSpec::new(GeneratorKind::RandomWalk, 3, 2)];
    let (expert, offline) = generate_dataset(&spec, &gens).unwrap();

    let p = dir.join("offline.jsonl");
    offline.save(&p).unwrap();
    let back = Dataset::load(&p).unwrap();
    let same = back.iter().zip(offline.iter()).all(|(a, b)| bits(&a.states) == bits(&b.states) && bits(&a.actions) == bits(&b.actions))
        && back.to_jsonl().unwrap().as_bytes() == std::fs::read(&p).unwrap().as_slice();
    if !same {
        failed.push("dataset");
    }

    let cfg = WmConfig { epochs: 1, latent_dim: 4, hidden: vec![8], ..WmConfig::default() };
    let (wm, _) = train_world_model(&expert, &offline, &cfg).unwrap();
    let p = dir.join("wm.ckpt");
    wm.save(&p).unwrap();
    let wm2 = WorldModel::load(&p).unwrap();
    let states: Vec<&[f64]> = offline.iter().flat_map(|t| t.states.iter().map(Vec::as_slice)).collect();
    let same = wm2.to_checkpoint().unwrap().to_bytes().unwrap() == std::fs::read(&p).unwrap()
        && bits(&wm.encode_states(&states).unwrap()) == bits(&wm2.encode_states(&states).unwrap());
    if !same {
        failed.push("world model checkpoint");
    }

    let norm = NormStats::compute(&[&expert, &offline]).unwrap();
    let policy = GaussianPolicy::new(spec.obs_dim(), 2, &[8], Activation::Tanh, false, norm, 5).unwrap();
    let p = dir.join("policy.ckpt");
    policy.save(&p, 5).unwrap();
    let policy2 = GaussianPolicy::load(&p).unwrap();
    let same = policy2.to_checkpoint(5).unwrap().to_bytes().unwrap() == std::fs::read(&p).unwrap()
        && states.iter().all(|s| bits(&[policy.act(s).unwrap()]) == bits(&[policy2.act(s).unwrap()]));
    if !same {
        failed.push("policy checkpoint");
    }
    failed
}
