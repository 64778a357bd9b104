use super::*;
use crate::autodiff::{finite_diff_grad, grad, Graph, Parameters, Tensor};
use crate::error::Error;
use crate::models::{episode_loss, ArchConfig, HeadKind, Model};
use crate::rng::Rng;
use crate::tasks::{gen_synthetic, sample_disjoint_pair, sample_episode, Dataset, Episode, SyntheticSpec, TaskPair};

fn dataset(classes: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec { num_classes: classes, instances_per_class: 12, feature_dim: 6, latent_dim: 4, ..Default::default() };
    gen_synthetic(&spec, &mut Rng::new(seed)).unwrap()
}

fn small_cfg(mode: Mode, head: HeadKind) -> TrainerConfig {
    TrainerConfig {
        mode,
        arch: ArchConfig { head, embed_hidden: vec![8], embed_dim: 4, relation_hidden: vec![4] },
        alpha: 0.05,
        beta: 1e-2,
        meta_batch: 2,
        total_episodes: 6,
        eval_interval: 3,
        val_episodes: 10,
        way: 3,
        shot: 1,
        queries: 2,
        seed: 17,
        ..Default::default()
    }
}

fn scalar_param(x: f64) -> Parameters {
    let mut p = Parameters::new();
    p.insert("theta", Tensor::scalar(x).unwrap());
    p
}

fn state_for(cfg: &TrainerConfig, ds: &Dataset) -> (Model, TrainState) {
    let t = Trainer::new(cfg, ds, None).unwrap();
    (t.model().clone(), t.init_state())
}

#[test]
fn inner_update_zero_step_is_identity() {
    let ds = dataset(8, 1);
    let cfg = small_cfg(Mode::L2g, HeadKind::Relation);
    let (model, state) = state_for(&cfg, &ds);
    let ep = sample_episode(&ds, 3, 1, 2, &mut Rng::new(2)).unwrap();
    let g = Graph::new();
    let p = state.params.attach(&g);
    let loss = episode_loss(&model, &p, &ep).unwrap();
    for create_graph in [false, true] {
        let q = inner_update(&p, &loss, 0.0, create_graph).unwrap();
        assert!(q.bit_eq(&state.params));
    }
}

#[test]
fn inner_update_on_half_square_norm() {
    let g = Graph::new();
    let mut p = Parameters::new();
    p.insert("a", g.watch(&Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()));
    p.insert("b", g.watch(&Tensor::scalar(0.5).unwrap()));
    let loss = p.get("a").unwrap().square().unwrap().sum_all().unwrap();
    let loss = loss.add(&p.get("b").unwrap().square().unwrap()).unwrap().scale(0.5).unwrap();
    let q = inner_update(&p, &loss, 0.1, false).unwrap();
    for (x, y) in p.flatten().iter().zip(q.flatten()) {
        assert!((y - 0.9 * x).abs() < 1e-15);
    }
}

#[test]
fn inner_update_matches_finite_differences() {
    let ds = dataset(8, 3);
    let cfg = small_cfg(Mode::L2g, HeadKind::Relation);
    let (model, state) = state_for(&cfg, &ds);
    let ep = sample_episode(&ds, 3, 1, 2, &mut Rng::new(4)).unwrap();
    let g = Graph::new();
    let p = state.params.attach(&g);
    let alpha = 0.1;
    let q = inner_update(&p, &episode_loss(&model, &p, &ep).unwrap(), alpha, false).unwrap();
    let fd = finite_diff_grad(|x| episode_loss(&model, x, &ep)?.item(), &state.params, 1e-6).unwrap();
    let expected: Vec<f64> = state.params.flatten().iter().zip(fd.flatten()).map(|(x, d)| x - alpha * d).collect();
    for (a, b) in q.flatten().iter().zip(expected) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn quadratic_meta_grad(theta: f64, t: f64, alpha: f64, exact: bool) -> f64 {
    let g = Graph::new();
    let p = scalar_param(theta).attach(&g);
    let th = p.get("theta").unwrap();
    let inner = th.square().unwrap().scale(0.5).unwrap();
    let q = inner_update(&p, &inner, alpha, exact).unwrap();
    let target = Tensor::scalar(t).unwrap();
    let outer = q.get("theta").unwrap().sub(&target).unwrap().square().unwrap().scale(0.5).unwrap();
    grad(&outer, &p, false).unwrap().get("theta").unwrap().item().unwrap()
}

#[test]
fn quadratic_bilevel_closed_form() {
    let exact = quadratic_meta_grad(1.0, 2.0, 0.1, true);
    assert!((exact - (-0.99)).abs() < 1e-12);
    let first = quadratic_meta_grad(1.0, 2.0, 0.1, false);
    assert!((first - (-1.1)).abs() < 1e-12);
    for (theta, t, a) in [(0.3, -1.0, 0.5), (-2.0, 4.0, 0.01), (5.0, 5.0, 0.9)] {
        let e = quadratic_meta_grad(theta, t, a, true);
        assert!((e - (1.0 - a) * ((1.0 - a) * theta - t)).abs() < 1e-12);
        let f = quadratic_meta_grad(theta, t, a, false);
        assert!((f - ((1.0 - a) * theta - t)).abs() < 1e-12);
    }
}

#[test]
fn meta_loss_zero_alpha_is_second_episode_loss() {
    let ds = dataset(8, 5);
    let cfg = small_cfg(Mode::L2g, HeadKind::Proto);
    let (model, state) = state_for(&cfg, &ds);
    let pair = sample_disjoint_pair(&ds, 3, 1, 2, &mut Rng::new(6)).unwrap();
    let g = Graph::new();
    let p = state.params.attach(&g);
    for mode in [GradMode::Exact, GradMode::FirstOrder] {
        let m = meta_loss(&model, &p, &pair, 0.0, mode).unwrap();
        assert!(m.bit_eq(&episode_loss(&model, &state.params, pair.second()).unwrap()));
    }
}

#[test]
fn grad_modes_share_values_but_not_gradients() {
    let ds = dataset(8, 7);
    for head in [HeadKind::Proto, HeadKind::Relation] {
        let cfg = small_cfg(Mode::L2g, head);
        let (model, state) = state_for(&cfg, &ds);
        let pair = sample_disjoint_pair(&ds, 3, 1, 2, &mut Rng::new(8)).unwrap();
        let g = Graph::new();
        let p = state.params.attach(&g);
        let exact = meta_loss(&model, &p, &pair, 0.3, GradMode::Exact).unwrap();
        let first = meta_loss(&model, &p, &pair, 0.3, GradMode::FirstOrder).unwrap();
        assert!(exact.bit_eq(&first));
        let ge = grad(&exact, &p, false).unwrap();
        let gf = grad(&first, &p, false).unwrap();
        assert!(ge.rel_err(&gf) > 1e-8);
    }
}

fn batch(ds: &Dataset, cfg: &TrainerConfig, seed: u64) -> (Vec<TaskPair>, Vec<Episode>) {
    let mut rng = Rng::new(seed);
    let pairs: Vec<_> = (0..cfg.meta_batch).map(|_| sample_disjoint_pair(ds, cfg.way, cfg.shot, cfg.queries, &mut rng).unwrap()).collect();
    let eps = pairs.iter().map(|p| p.first().clone()).collect();
    (pairs, eps)
}

#[test]
fn same_task_pairs_reproduce_maml_x() {
    let ds = dataset(8, 9);
    for grad_mode in [GradMode::Exact, GradMode::FirstOrder] {
        let cfg = TrainerConfig { grad_mode, ..small_cfg(Mode::L2g, HeadKind::Relation) };
        let (model, s0) = state_for(&cfg, &ds);
        let (_, eps) = batch(&ds, &cfg, 10);
        let pairs: Vec<_> = eps.iter().cloned().map(TaskPair::same_task).collect();
        let (a, la) = meta_step(&model, &s0, &pairs, &cfg).unwrap();
        let (b, lb) = maml_x_step(&model, &s0, &eps, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(la, lb);
    }
}

#[test]
fn zero_alpha_reduces_to_episodic() {
    let ds = dataset(8, 11);
    for head in [HeadKind::Proto, HeadKind::Relation] {
        for grad_mode in [GradMode::Exact, GradMode::FirstOrder] {
            let cfg = TrainerConfig { alpha: 0.0, grad_mode, ..small_cfg(Mode::L2g, head) };
            let (model, mut a) = state_for(&cfg, &ds);
            let mut b = a.clone();
            for step in 0..3 {
                let (pairs, _) = batch(&ds, &cfg, 100 + step);
                let outer: Vec<Episode> = pairs.iter().map(|p| p.second().clone()).collect();
                let (na, la) = meta_step(&model, &a, &pairs, &cfg).unwrap();
                let (nb, lb) = episodic_step(&model, &b, &outer, &cfg).unwrap();
                assert_eq!(la.outer, lb.outer);
                a = na;
                b = nb;
                assert_eq!(a.to_bytes(), b.to_bytes(), "{head:?} {grad_mode:?} step {step}");
            }
        }
    }
}

#[test]
fn batch_size_must_match() {
    let ds = dataset(8, 12);
    let cfg = small_cfg(Mode::L2g, HeadKind::Proto);
    let (model, s0) = state_for(&cfg, &ds);
    let (pairs, eps) = batch(&ds, &cfg, 1);
    assert!(matches!(meta_step(&model, &s0, &pairs[..1], &cfg), Err(Error::Contract(_))));
    assert!(episodic_step(&model, &s0, &eps[..1], &cfg).is_err());
}

#[test]
fn single_pair_batch_is_plain_adam_step() {
    let ds = dataset(8, 13);
    let cfg = TrainerConfig { meta_batch: 1, ..small_cfg(Mode::L2g, HeadKind::Proto) };
    let (model, s0) = state_for(&cfg, &ds);
    let (pairs, _) = batch(&ds, &cfg, 2);
    let (next, _) = meta_step(&model, &s0, &pairs, &cfg).unwrap();
    let g = Graph::new();
    let p = s0.params.attach(&g);
    let loss = meta_loss(&model, &p, &pairs[0], cfg.alpha, cfg.grad_mode).unwrap();
    let grads = grad(&loss, &p, false).unwrap();
    let Optimizer::Adam(opt) = &s0.optimizer else { unreachable!() };
    let (_, expected) = adam_update(opt, &s0.params, &grads, cfg.beta).unwrap();
    assert!(next.params.bit_eq(&expected));
    assert_eq!(next.episode, 1);
}

#[test]
fn sum_reduction_scales_sgd_step() {
    let ds = dataset(8, 14);
    let base = TrainerConfig { optimizer: OptimizerKind::Sgd, ..small_cfg(Mode::Episodic, HeadKind::Proto) };
    let (model, s0) = state_for(&base, &ds);
    let (_, eps) = batch(&ds, &base, 3);
    let (mean, _) = episodic_step(&model, &s0, &eps, &base).unwrap();
    let sum_cfg = TrainerConfig { reduction: Reduction::Sum, ..base.clone() };
    let (sum, _) = episodic_step(&model, &s0, &eps, &sum_cfg).unwrap();
    let p0 = s0.params.flatten();
    for ((a, m), s) in p0.iter().zip(mean.params.flatten()).zip(sum.params.flatten()) {
        let (dm, ds) = (m - a, s - a);
        assert!((ds - 2.0 * dm).abs() <= 1e-12 * (1.0 + ds.abs()));
    }
}

#[test]
fn episodic_overfits_single_easy_episode() {
    let ds = dataset(8, 15);
    let cfg = TrainerConfig { meta_batch: 1, beta: 1e-3, ..small_cfg(Mode::Episodic, HeadKind::Proto) };
    let (model, mut state) = state_for(&cfg, &ds);
    let ep = vec![sample_episode(&ds, 3, 2, 3, &mut Rng::new(16)).unwrap()];
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let (next, losses) = episodic_step(&model, &state, &ep, &cfg).unwrap();
        assert!(losses.outer[0] < prev, "{} !< {prev}", losses.outer[0]);
        prev = losses.outer[0];
        state = next;
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let p = scalar_param(0.7);
    let mut zero = crate::autodiff::GradientMap::default();
    zero.insert("theta", Tensor::scalar(0.0).unwrap());
    let opt = Optimizer::new(OptimizerKind::Adam, AdamHyper::default(), &p);
    let (_, q) = opt.apply(&p, &zero, 1e-3).unwrap();
    assert!(q.bit_eq(&p));
}

#[test]
fn overflow_aborts_without_touching_state() {
    let ds = dataset(8, 17);
    let cfg = small_cfg(Mode::L2g, HeadKind::Proto);
    let (model, s0) = state_for(&cfg, &ds);
    let huge: Parameters = s0.params.iter().map(|(n, t)| (n.clone(), t.scale(1e160).unwrap())).collect();
    let state = TrainState { params: huge, ..s0 };
    let before = state.clone();
    let (pairs, _) = batch(&ds, &cfg, 5);
    assert!(matches!(meta_step(&model, &state, &pairs, &cfg), Err(Error::Numeric(_))));
    assert_eq!(state, before);
}

#[test]
fn divergent_run_reports_episode_and_keeps_log() {
    let ds = dataset(8, 18);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig { beta: 1e200, ..small_cfg(Mode::Episodic, HeadKind::Proto) };
    let err = train(&cfg, &ds, None, Some(dir.path())).unwrap_err();
    match err {
        Error::Numeric(msg) => assert!(msg.contains("aborted at episode 1"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let log = RunLog::from_csv(&std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(log.len(), 1);
    assert!(!dir.path().join(FINAL_CHECKPOINT).exists());
}

#[test]
fn class_count_boundary() {
    let cfg = TrainerConfig { way: 5, ..small_cfg(Mode::L2g, HeadKind::Proto) };
    let ten = dataset(10, 19);
    assert!(train(&TrainerConfig { total_episodes: 2, ..cfg.clone() }, &ten, None, None).is_ok());
    let nine = ten.subset(&(0..9).collect::<Vec<_>>()).unwrap();
    assert!(matches!(Trainer::new(&cfg, &nine, None), Err(Error::Config(_))));
    let episodic = TrainerConfig { mode: Mode::Episodic, ..cfg };
    assert!(Trainer::new(&episodic, &nine, None).is_ok());
}

#[test]
fn config_validation() {
    let ok = TrainerConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        TrainerConfig { alpha: -1e-3, ..ok.clone() },
        TrainerConfig { beta: 0.0, ..ok.clone() },
        TrainerConfig { meta_batch: 0, ..ok.clone() },
        TrainerConfig { way: 1, ..ok.clone() },
        TrainerConfig { halve_every: 0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    assert_eq!("maml_x".parse::<Mode>().unwrap(), Mode::MamlX);
    assert!("maml".parse::<Mode>().is_err());
}

fn run_bytes(cfg: &TrainerConfig, train_ds: &Dataset, val: &Dataset) -> (String, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    train(cfg, train_ds, Some(val), Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let ckpt = std::fs::read(dir.path().join(FINAL_CHECKPOINT)).unwrap();
    (log, ckpt)
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let ds = dataset(10, 20);
    let val = dataset(6, 21);
    for mode in [Mode::Episodic, Mode::MamlX, Mode::L2g] {
        let cfg = TrainerConfig { meta_batch: 3, ..small_cfg(mode, HeadKind::Relation) };
        let a = run_bytes(&cfg, &ds, &val);
        let b = run_bytes(&cfg, &ds, &val);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| run_bytes(&cfg, &ds, &val));
        assert_eq!(a, b);
        assert_eq!(a, c);
        let log = RunLog::from_csv(&a.0).unwrap();
        assert_eq!(log.len(), 6);
        let evaluated: Vec<u64> = log.records().iter().filter(|r| r.val_accuracy.is_some()).map(|r| r.episode).collect();
        assert_eq!(evaluated, vec![2, 5]);
        for r in log.records() {
            assert!(r.meta_loss.is_finite());
            assert_eq!(r.inner_loss.is_some(), mode != Mode::Episodic);
            assert!(r.inner_loss.is_none_or(f64::is_finite));
        }
    }
}

#[test]
fn checkpoints_written_at_eval_points() {
    let ds = dataset(10, 22);
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(Mode::L2g, HeadKind::Proto);
    let (state, _) = train(&cfg, &ds, None, Some(dir.path())).unwrap();
    let mid = TrainState::load(dir.path().join(checkpoint_name(3))).unwrap();
    assert_eq!(mid.episode, 3);
    let last = TrainState::load(dir.path().join(checkpoint_name(6))).unwrap();
    assert_eq!(last, state);
    assert_eq!(TrainState::load(dir.path().join(FINAL_CHECKPOINT)).unwrap(), state);
}

#[test]
fn resume_from_checkpoint_continues_trajectory() {
    let ds = dataset(10, 23);
    let cfg = small_cfg(Mode::L2g, HeadKind::Relation);
    let dir = tempfile::tempdir().unwrap();
    let (full, full_log) = train(&cfg, &ds, None, Some(dir.path())).unwrap();
    let mid = TrainState::load(dir.path().join(checkpoint_name(3))).unwrap();
    let trainer = Trainer::new(&cfg, &ds, None).unwrap();
    let (resumed, log) = trainer.run(mid, None).unwrap();
    assert_eq!(resumed.to_bytes(), full.to_bytes());
    assert_eq!(log.records(), &full_log.records()[3..]);
}
