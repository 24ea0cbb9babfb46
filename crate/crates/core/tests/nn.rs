mod common;

use common::checks::{bc_grad_error, mlp_grad_error, stop_gradient_matches_constant, wm_grad_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbr::envs::{generate_dataset, GeneratorKind, GeneratorSpec, PointMazeSpec};
use sbr::nn::{Activation, AdamConfig, AdamState, Graph, Mlp, MlpSpec, ParamStore, TensorBuf};
use sbr::world_model::{train_world_model, RolloutMode, WmConfig};

#[test]
fn random_mlps_pass_grad_check() {
    for seed in 0..20 {
        let err = mlp_grad_error(seed);
        assert!(err < 1e-4, "mlp config {seed}: relative error {err:e}");
    }
}

#[test]
fn world_model_loss_passes_grad_check() {
    for h in [0, 1, 3] {
        for mode in [RolloutMode::OpenLoop, RolloutMode::TeacherForced] {
            let err = wm_grad_error(h, mode, 7 + h as u64);
            assert!(err < 1e-4, "H={h} {mode:?}: relative error {err:e}");
        }
    }
}

#[test]
fn bc_loss_passes_grad_check() {
    for seed in 0..3 {
        for fixed in [false, true] {
            let err = bc_grad_error(seed, fixed);
            assert!(err < 1e-4, "seed {seed} fixed_std {fixed}: relative error {err:e}");
        }
    }
}

#[test]
fn stop_gradient_equals_constant_substitution() {
    for seed in 0..10 {
        assert!(stop_gradient_matches_constant(seed), "window {seed}");
    }
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mlp = Mlp::new(MlpSpec::new(vec![2, 1], Activation::Tanh).unwrap(), "lin").unwrap();
    let mut params = ParamStore::new();
    mlp.init(&mut params, &mut rng);
    let xs: Vec<Vec<f64>> = (0..32).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.7 * x[0] - 0.2 * x[1] + 0.1]).collect();
    let x = TensorBuf::from_rows(&xs).unwrap();
    let y = TensorBuf::from_rows(&ys).unwrap();
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(0.05));
    for _ in 0..2000 {
        let grads = {
            let mut g = Graph::new(&params);
            let xi = g.input(x.clone());
            let yi = g.input(y.clone());
            let out = mlp.forward_graph(&mut g, xi).unwrap();
            let d = g.sub(out, yi).unwrap();
            let sq = g.square(d);
            let l = g.sum(sq);
            g.backward(l).unwrap()
        };
        adam.step(&mut params, &grads).unwrap();
    }
    let w = params.require(&mlp.weight_name(0)).unwrap().values().to_vec();
    let b = params.require(&mlp.bias_name(0)).unwrap().values()[0];
    assert!((w[0] - 0.7).abs() < 1e-3 && (w[1] + 0.2).abs() < 1e-3 && (b - 0.1).abs() < 1e-3, "{w:?} {b}");
}

#[test]
fn world_model_training_halves_the_loss_on_maze_data() {
    let spec = PointMazeSpec::builtin("umaze").unwrap();
    let gens = [
        GeneratorSpec::new(GeneratorKind::Expert, 3, 1),
        GeneratorSpec::new(GeneratorKind::WrongGoal, 10, 2),
        GeneratorSpec::new(GeneratorKind::RandomWalk, 5, 3),
    ];
    let (expert, offline) = generate_dataset(&spec, &gens).unwrap();
    let cfg = WmConfig { epochs: 8, latent_dim: 8, hidden: vec![32], ..WmConfig::default() };
    let (_, log) = train_world_model(&expert, &offline, &cfg).unwrap();
    let first = log.epoch_losses[0];
    let last = *log.epoch_losses.last().unwrap();
    assert!(last < 0.5 * first, "losses {:?}", log.epoch_losses);
}

#[test]
fn world_model_training_is_deterministic() {
    let spec = PointMazeSpec::builtin("open").unwrap();
    let gens = [GeneratorSpec::new(GeneratorKind::Expert, 2, 1), GeneratorSpec::new(GeneratorKind::RandomWalk, 3, 2)];
    let (expert, offline) = generate_dataset(&spec, &gens).unwrap();
    let cfg = WmConfig { epochs: 2, latent_dim: 4, hidden: vec![8], ..WmConfig::default() };
    let (a, la) = train_world_model(&expert, &offline, &cfg).unwrap();
    let (b, lb) = train_world_model(&expert, &offline, &cfg).unwrap();
    assert_eq!(a.to_checkpoint().unwrap().to_bytes().unwrap(), b.to_checkpoint().unwrap().to_bytes().unwrap());
    assert_eq!(la.epoch_losses, lb.epoch_losses);
}
