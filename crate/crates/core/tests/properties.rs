use drf_core::analysis::spike_stats;
use drf_core::autograd::ParamClass;
use drf_core::config::SpikeFnKind;
use drf_core::tasks::{load_task, mnist_permutation};
use drf_core::trainer::{evaluate, Trainer};
use drf_core::{make_rng, Mode, Model, RealSequence, RunConfig, SpikeTrain};
use proptest::prelude::*;

fn small_cfg(len: usize, n: usize, widths: Vec<usize>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.task.length = len;
    cfg.task.classes = 3;
    cfg.model.n = n;
    cfg.model.widths = widths;
    cfg.validate().unwrap();
    cfg
}

fn random_input(seed: u64, batch: usize, channels: usize, len: usize, scale: f64) -> RealSequence {
    let mut rng = make_rng(seed);
    RealSequence::new(batch, channels, len, (0..batch * channels * len).map(|_| scale * rng.normal()).collect()).unwrap()
}

#[test]
fn smoothed_two_layer_gradient_matches_finite_differences_at_l64() {
    let mut cfg = small_cfg(64, 3, vec![5, 4]);
    cfg.model.spike_fn = SpikeFnKind::Smooth;
    let mut model = Model::from_config(&cfg, 1, &mut make_rng(5)).unwrap();
    let x = random_input(6, 2, 1, 64, 1.0);
    let labels = [1, 2];
    let (_, grads) = model.loss_and_grad(&x, &labels, Mode::Parallel).unwrap();
    let analytic: Vec<(ParamClass, Vec<f64>)> = grads.tensors().iter().map(|(c, t)| (*c, t.to_vec())).collect();
    for class in [ParamClass::W, ParamClass::Tau, ParamClass::Omega, ParamClass::Gamma, ParamClass::C, ParamClass::ReadoutW] {
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (ti, (_, g)) in analytic.iter().enumerate().filter(|(_, (c, _))| *c == class) {
            for k in (0..g.len()).step_by(g.len().div_ceil(3)) {
                let orig = model.tensors()[ti][k];
                let h = 1e-5 * orig.abs().max(1.0);
                let mut loss_at = |v: f64| {
                    model.tensors_mut()[ti][k] = v;
                    model.bump_version();
                    model.forward_loss(&x, &labels, Mode::Parallel).unwrap().loss
                };
                let fd = (loss_at(orig + h) - loss_at(orig - h)) / (2.0 * h);
                loss_at(orig);
                diff = diff.max((fd - g[k]).abs());
                scale = scale.max(g[k].abs());
            }
        }
        assert!(diff <= 1e-5 * scale, "{}: {diff:e} vs scale {scale:e}", class.name());
    }
}

#[test]
fn gradients_are_bit_identical_across_runs() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let cfg = small_cfg(96, 4, vec![6, 6]);
        let run = || {
            let model = Model::from_config(&cfg, 2, &mut make_rng(11)).unwrap();
            let x = random_input(12, 3, 2, 96, 1.5);
            let (out, g) = model.loss_and_grad(&x, &[0, 1, 2], Mode::Parallel).unwrap();
            let bits: Vec<u64> = g.tensors().iter().flat_map(|(_, t)| t.iter().map(|v| v.to_bits())).collect();
            (out.loss.to_bits(), bits)
        };
        assert_eq!(run(), run());
    });
}

#[test]
fn sequential_and_parallel_training_stay_together_for_20_steps() {
    let mut cfg = RunConfig::default();
    cfg.task.length = 128;
    cfg.task.tones_per_class = 2;
    cfg.task.noise = 1.0;
    cfg.task.train_size = 160;
    cfg.task.test_size = 16;
    cfg.model.widths = vec![8];
    cfg.optim.batch_size = 8;
    cfg.validate().unwrap();
    let losses = |mode: Mode| {
        let mut c = cfg.clone();
        c.optim.mode = mode;
        let mut tr = Trainer::new(&c, 1).unwrap();
        let data = load_task(&c, tr.rng()).unwrap();
        tr.train_steps(&data.train, 20).unwrap().iter().map(|m| m.loss).collect::<Vec<_>>()
    };
    let seq = losses(Mode::Sequential);
    let par = losses(Mode::Parallel);
    for (step, (a, b)) in seq.iter().zip(&par).enumerate() {
        assert!((a - b).abs() < 1e-4 * a.abs(), "step {step}: {a} vs {b}");
    }
}

#[test]
fn reported_spike_rate_is_spike_stats_rate() {
    let cfg = small_cfg(128, 4, vec![8, 6]);
    let model = Model::from_config(&cfg, 1, &mut make_rng(21)).unwrap();
    let x = random_input(22, 5, 1, 128, 2.0);
    let pass = model.forward(&x, Mode::Parallel).unwrap();
    let trains: Vec<SpikeTrain> = pass
        .tape
        .layers
        .iter()
        .map(|l| {
            let s = l.output.as_ref().unwrap();
            let (b, n, len) = s.shape();
            SpikeTrain::from_reals(b, n, len, s.values()).unwrap()
        })
        .collect();
    let stats = spike_stats(&trains.iter().collect::<Vec<_>>()).unwrap();
    let labels = vec![0; 5];
    let data = drf_core::tasks::LabeledSequenceBatch::new(x, labels).unwrap();
    let m = evaluate(&model, &data, 2, Mode::Parallel).unwrap();
    assert_eq!(m.spikes, stats);
    assert_eq!(m.spike_rate, stats.rate());
}

#[test]
fn splits_and_batch_order_regenerate() {
    let mut cfg = RunConfig::default();
    cfg.task.length = 64;
    cfg.task.tones_per_class = 2;
    cfg.task.train_size = 40;
    cfg.task.test_size = 10;
    cfg.optim.batch_size = 7;
    let a = Trainer::new(&cfg, 1).unwrap();
    let b = Trainer::new(&cfg, 1).unwrap();
    let da = load_task(&cfg, a.rng()).unwrap();
    let db = load_task(&cfg, b.rng()).unwrap();
    assert_eq!(da.train.inputs, db.train.inputs);
    assert_eq!(da.test.labels, db.test.labels);
    for step in 0..20 {
        assert_eq!(a.batch_indices(40, step), b.batch_indices(40, step));
    }
}

#[test]
fn psmnist_permutation_is_a_bijection() {
    for seed in [1, 2, 99] {
        let mut p = mnist_permutation(seed);
        p.sort_unstable();
        assert_eq!(p, (0..784).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_and_gradients_are_finite(seed in 0u64..10_000, n in 1usize..6, scale in 0.0f64..20.0, len in 16usize..200) {
        let cfg = small_cfg(len, n, vec![4, 3]);
        let model = Model::from_config(&cfg, 2, &mut make_rng(seed)).unwrap();
        let x = random_input(seed + 1, 2, 2, len, scale);
        for mode in [Mode::Parallel, Mode::Sequential] {
            let (out, g) = model.loss_and_grad(&x, &[0, 2], mode).unwrap();
            prop_assert!(out.loss.is_finite());
            prop_assert!(model.forward(&x, mode).unwrap().scores.iter().all(|s| s.is_finite()));
            prop_assert!(g.is_finite());
        }
    }

    #[test]
    fn optimizer_steps_keep_parameters_valid(seed in 0u64..10_000, lr in 1e-4f64..0.5, clip in prop_oneof![Just(0.0), 0.1f64..5.0]) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.task.length = 48;
        cfg.task.tones_per_class = 1;
        cfg.task.train_size = 24;
        cfg.task.test_size = 4;
        cfg.model.widths = vec![4];
        cfg.model.train_alpha = true;
        cfg.optim.lr = lr;
        cfg.optim.grad_clip = clip;
        cfg.optim.batch_size = 8;
        let mut tr = Trainer::new(&cfg, 1).unwrap();
        let data = load_task(&cfg, tr.rng()).unwrap();
        for _ in 0..6 {
            tr.train_steps(&data.train, 1).unwrap();
            prop_assert!(tr.model.validate_params().is_ok());
            for l in &tr.model.layers {
                for j in 0..l.neurons {
                    for i in 0..l.branches {
                        prop_assert!(l.tau(j, i) > 0.0);
                        prop_assert!(l.omega(j, i) >= 0.0);
                    }
                }
                prop_assert!(l.alpha().iter().all(|&a| a > 0.0 && a < 1.0));
            }
        }
    }
}
