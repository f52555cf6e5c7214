use proptest::prelude::*;

use super::*;
use crate::data::{Dataset, GenConfig};
use crate::model::{featurize, ModelConfig, ParamStore};

fn toy(seed: u64, users: u32) -> (Dataset, ModelConfig) {
    let cfg = GenConfig {
        num_users: users,
        num_items: 60,
        clusters: 4,
        d_m: 6,
        l_max_u: 6,
        l_max_l: 20,
        l_bc: 4,
        candidates_per_request: 4,
        interests_per_user: 2,
        min_history: 6,
        seed,
        ..GenConfig::default()
    };
    let ds = Dataset::generate(&cfg).unwrap();
    let mut m = ModelConfig::for_data(&cfg);
    m.d = 8;
    m.emb_dim = 8;
    m.layers = 2;
    m.k = 3;
    m.head_hidden = vec![8];
    (ds, m)
}

fn inputs<T: Float>(ds: &Dataset, cfg: &ModelConfig) -> Vec<RequestInputs<T>> {
    ds.requests.iter().map(|r| featurize(cfg, &ds.catalog, r).unwrap()).collect()
}

fn store(values: &[f64], kind: ParamKind) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("w", kind, Tensor::new(&[values.len()], values.to_vec()).unwrap())
        .unwrap();
    s
}

fn same_params(a: &Model<f64>, b: &Model<f64>) -> bool {
    a.params.iter().zip(b.params.iter()).all(|((_, x), (_, y))| x.tensor.data() == y.tensor.data())
}

// ---- AdamW ------------------------------------------------------------------

#[test]
fn adamw_first_step_is_sign_times_lr() {
    let cfg = AdamWConfig {
        lr: 0.1,
        weight_decay: 0.5,
        ..AdamWConfig::default()
    };
    for kind in [ParamKind::Dense, ParamKind::Sparse] {
        let mut s = store(&[1.0, -2.0, 3.0], kind);
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s, &[vec![0.3, -4.0, 0.0]]).unwrap();
        let decay = if kind == ParamKind::Dense { 0.1 * 0.5 } else { 0.0 };
        let want = [
            1.0 - decay - 0.1 * 0.3 / (0.3 + 1e-8),
            -2.0 + 2.0 * decay + 0.1 * 4.0 / (4.0 + 1e-8),
            3.0 - 3.0 * decay,
        ];
        for (g, w) in s.get(ParamId(0)).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{kind:?}: {g} vs {w}");
        }
    }
}

#[test]
fn adamw_matches_scalar_reference_over_ten_steps() {
    let cfg = AdamWConfig {
        lr: 0.01,
        beta1: 0.8,
        beta2: 0.95,
        eps: 1e-6,
        weight_decay: 0.1,
    };
    let mut s = store(&[0.5], ParamKind::Dense);
    let mut opt = AdamW::new(cfg, &s);
    let (mut theta, mut m, mut v) = (0.5f64, 0.0, 0.0);
    for t in 1..=10 {
        let g = (t as f64 * 0.7).sin();
        opt.step(&mut s, &[vec![g]]).unwrap();
        m = 0.8 * m + 0.2 * g;
        v = 0.95 * v + 0.05 * g * g;
        let mh = m / (1.0 - 0.8f64.powi(t));
        let vh = v / (1.0 - 0.95f64.powi(t));
        theta = theta - 0.01 * 0.1 * theta - 0.01 * mh / (vh.sqrt() + 1e-6);
        assert!((s.get(ParamId(0)).data()[0] - theta).abs() < 1e-14);
    }
    assert_eq!(opt.states[0].t, 10);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut s = store(&[1.0, 2.0], ParamKind::Dense);
    let cfg = AdamWConfig {
        lr: 0.0,
        weight_decay: 0.3,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &s);
    opt.step(&mut s, &[vec![5.0, -1.0]]).unwrap();
    assert_eq!(s.get(ParamId(0)).data(), &[1.0, 2.0]);
}

#[test]
fn non_finite_gradients_are_rejected_before_any_update() {
    let mut s = store(&[1.0, 2.0], ParamKind::Dense);
    let mut opt = AdamW::new(AdamWConfig::default(), &s);
    let err = opt.step(&mut s, &[vec![f64::NAN, 1.0]]).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite(name) if name == "w"));
    assert_eq!(s.get(ParamId(0)).data(), &[1.0, 2.0]);
    assert_eq!(opt.states[0].t, 0);
}

#[test]
fn clipping_scales_to_the_cap() {
    let mut g = vec![vec![3.0f64], vec![4.0]];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    let mut g = vec![vec![0.3f64]];
    clip_global_norm(&mut g, 1.0);
    assert_eq!(g[0][0], 0.3);
}

// ---- batching ---------------------------------------------------------------

proptest! {
    #[test]
    fn batches_partition_the_requests(sizes in prop::collection::vec(1usize..12, 0..60), bs in 1usize..40, seed in any::<u64>(), epoch in 0u32..4) {
        let plan = batches(&sizes, bs, seed, epoch);
        let mut seen: Vec<usize> = plan.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..sizes.len()).collect::<Vec<_>>());
        for (i, b) in plan.iter().enumerate() {
            let n: usize = b.iter().map(|&j| sizes[j]).sum();
            if i + 1 < plan.len() {
                prop_assert!(n >= bs);
            }
            // a batch closes as soon as it reaches the target
            prop_assert!(n - sizes[*b.last().unwrap()] < bs);
        }
        prop_assert_eq!(&plan, &batches(&sizes, bs, seed, epoch));
    }
}

#[test]
fn epochs_use_different_orders() {
    let sizes = vec![1; 50];
    assert_ne!(batches(&sizes, 5, 1, 1), batches(&sizes, 5, 1, 2));
}

// ---- config -----------------------------------------------------------------

#[test]
fn train_config_text_round_trips_and_validates() {
    let mut c = TrainConfig::default();
    c.set("clip_norm", "none").unwrap();
    c.set("multi_epoch_reset", "true").unwrap();
    let mut d = TrainConfig::default();
    for (k, v) in c.entries() {
        d.set(k, &v).unwrap();
    }
    assert_eq!(c.entries(), d.entries());
    assert!(d.set("lr", "1").is_err());
    assert!(d.set("epochs", "two").is_err());
    d.epochs = 0;
    assert!(d.validate().is_err());
    d.epochs = 1;
    d.adamw.lr = f64::NAN;
    assert!(d.validate().is_err());
}

// ---- gradients and steps ----------------------------------------------------

#[test]
fn gradients_match_finite_differences() {
    let (ds, mut cfg) = toy(3, 3);
    cfg.init_std = 0.3;
    cfg.zero_init_outputs = false;
    for arch in ["est", "full", "full:NB"] {
        cfg.arch = arch.parse().unwrap();
        let mut model = Model::<f64>::new(cfg.clone(), 4).unwrap();
        let inp = inputs::<f64>(&ds, &cfg);
        let batch: Vec<&RequestInputs<f64>> = inp.iter().take(2).collect();
        let r = grad_check(&mut model, &batch, 6, 1e-4, 1).unwrap();
        assert!(r.max_rel_err <= 1e-4, "{arch}: {r:?}");
        assert!(r.checked > model.params.len());
    }
}

#[test]
fn parallel_and_sequential_gradients_are_bit_identical() {
    let (ds, cfg) = toy(5, 8);
    let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let inp = inputs::<f64>(&ds, &cfg);
    let batch: Vec<&RequestInputs<f64>> = inp.iter().collect();
    let a = batch_gradients(&model, &batch, Execution::Parallel).unwrap();
    let b = batch_gradients(&model, &batch, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert!((a.0 - batch_loss(&model, &batch).unwrap()).abs() < 1e-12);
}

#[test]
fn a_small_step_reduces_the_batch_loss() {
    let (ds, cfg) = toy(6, 8);
    let mut model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let inp = inputs::<f64>(&ds, &cfg);
    let batch: Vec<&RequestInputs<f64>> = inp.iter().collect();
    let (before, grads) = batch_gradients(&model, &batch, Execution::Sequential).unwrap();
    let cfg = AdamWConfig {
        lr: 1e-4,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &model.params);
    opt.step(&mut model.params, &grads).unwrap();
    assert!(batch_loss(&model, &batch).unwrap() < before);
}

#[test]
fn training_is_deterministic_and_learns() {
    let (ds, cfg) = toy(7, 40);
    let inp = inputs::<f64>(&ds, &cfg);
    let (tr, va) = inp.split_at(32);
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 16,
        adamw: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        ..TrainConfig::default()
    };
    let run = || {
        let mut model = Model::<f64>::new(cfg.clone(), 2).unwrap();
        let mut st = TrainState::new(&model, &tc);
        let rep = multi_epoch_train(&mut model, &mut st, tr, va, &tc, &mut ()).unwrap();
        (model, st, rep)
    };
    let (m1, s1, r1) = run();
    let (m2, _, r2) = run();
    assert!(same_params(&m1, &m2));
    assert_eq!(r1, r2);
    assert_eq!(r1.epoch_evals.len(), 3);
    assert_eq!(s1.epoch, 3);
    assert!(r1.epoch_losses[2] < r1.epoch_losses[0]);
}

#[test]
fn evaluate_agrees_with_direct_metrics() {
    let (ds, cfg) = toy(8, 10);
    let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let inp = inputs::<f64>(&ds, &cfg);
    let r = evaluate(&model, &inp, Execution::Sequential).unwrap();
    let mut s = Vec::new();
    let mut y = Vec::new();
    let mut u = Vec::new();
    for q in &inp {
        s.extend(model.predict_request(q).unwrap());
        y.extend(q.labels());
        u.extend(std::iter::repeat(q.user.user_id).take(q.candidates.len()));
    }
    assert_eq!(r.auc, metrics::auc(&s, &y).unwrap());
    assert_eq!(r.gauc, metrics::gauc(&s, &y, &u).unwrap());
    assert_eq!(r.logloss, metrics::log_loss(&s, &y).unwrap());
}

// ---- multi-epoch reset ------------------------------------------------------

/// Records the sparse/dense values around every epoch boundary.
#[derive(Default)]
struct Boundaries {
    start: Vec<Vec<Vec<f64>>>,
    end: Vec<Vec<Vec<f64>>>,
}

fn values(model: &Model<f64>) -> Vec<Vec<f64>> {
    model.params.iter().map(|(_, p)| p.tensor.data().to_vec()).collect()
}

impl Observer<f64> for Boundaries {
    fn on_epoch_start(&mut self, _epoch: u32, model: &Model<f64>) {
        self.start.push(values(model));
    }
    fn on_epoch_end(&mut self, _epoch: u32, model: &Model<f64>) {
        self.end.push(values(model));
    }
}

fn reset_run(reset: bool) -> (Model<f64>, Boundaries) {
    let (ds, cfg) = toy(9, 20);
    let inp = inputs::<f64>(&ds, &cfg);
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 20,
        multi_epoch_reset: reset,
        adamw: AdamWConfig {
            lr: 1e-2,
            ..AdamWConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut model = Model::<f64>::new(cfg, 3).unwrap();
    let mut st = TrainState::new(&model, &tc);
    let mut obs = Boundaries::default();
    multi_epoch_train(&mut model, &mut st, &inp, &[], &tc, &mut obs).unwrap();
    (model, obs)
}

#[test]
fn reset_restores_sparse_and_carries_dense_at_every_boundary() {
    let (model, obs) = reset_run(true);
    let initial = &obs.start[0];
    for e in 1..3 {
        for (id, p) in model.params.iter() {
            let now = &obs.start[e][id.0];
            match p.kind {
                ParamKind::Sparse => assert_eq!(now, &initial[id.0], "{} at epoch {}", p.name, e + 1),
                ParamKind::Dense => assert_eq!(now, &obs.end[e - 1][id.0]),
            }
        }
    }
    // the sparse tables did move during each epoch
    let moved = model
        .params
        .iter()
        .any(|(id, p)| p.kind == ParamKind::Sparse && obs.end[0][id.0] != initial[id.0]);
    assert!(moved);
}

#[test]
fn without_reset_sparse_tables_carry_over() {
    let (model, obs) = reset_run(false);
    for (id, _) in model.params.iter() {
        assert_eq!(obs.start[1][id.0], obs.end[0][id.0]);
    }
}

#[test]
fn reset_is_idempotent_and_zeroes_only_sparse_moments() {
    let (ds, cfg) = toy(10, 6);
    let inp = inputs::<f64>(&ds, &cfg);
    let tc = TrainConfig::default();
    let mut model = Model::<f64>::new(cfg, 3).unwrap();
    let mut st = TrainState::new(&model, &tc);
    train_epoch(&mut model, &mut st, &inp, &[], &tc, &mut ()).unwrap();
    st.reset_sparse(&mut model);
    let (once_m, once_s) = (model.clone(), st.clone());
    st.reset_sparse(&mut model);
    assert!(same_params(&model, &once_m));
    assert_eq!(st.optimizer, once_s.optimizer);
    for (id, p) in model.params.iter() {
        let s = &st.optimizer.states[id.0];
        match p.kind {
            ParamKind::Sparse => assert!(s.t == 0 && s.m.iter().chain(&s.v).all(|&x| x == 0.0)),
            ParamKind::Dense => assert_eq!(s.t, st.step),
        }
    }
}

// ---- checkpoints ------------------------------------------------------------

#[test]
fn resuming_from_a_checkpoint_matches_uninterrupted_training() {
    let (ds, cfg) = toy(11, 12);
    let inp = inputs::<f64>(&ds, &cfg);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 12,
        multi_epoch_reset: true,
        ..TrainConfig::default()
    };
    let mut straight = Model::<f64>::new(cfg.clone(), 5).unwrap();
    let mut st = TrainState::new(&straight, &tc);
    multi_epoch_train(&mut straight, &mut st, &inp, &[], &tc, &mut ()).unwrap();

    let mut half = Model::<f64>::new(cfg, 5).unwrap();
    let mut hs = TrainState::new(&half, &tc);
    let one = TrainConfig { epochs: 1, ..tc.clone() };
    multi_epoch_train(&mut half, &mut hs, &inp, &[], &one, &mut ()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    hs.save(&half, &path).unwrap();
    let ck = checkpoint::load::<f64>(&path).unwrap();
    let (mut resumed, mut rs) = TrainState::from_checkpoint(&ck, &tc).unwrap();
    assert_eq!(rs.epoch, 1);
    assert_eq!(rs.optimizer, hs.optimizer);
    multi_epoch_train(&mut resumed, &mut rs, &inp, &[], &tc, &mut ()).unwrap();
    assert!(same_params(&resumed, &straight));
    assert_eq!(rs.step, st.step);
}

#[test]
fn warm_start_copies_only_sparse_tables() {
    let (_, cfg) = toy(12, 4);
    let src = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let mut dst = Model::<f64>::new(cfg, 2).unwrap();
    let before = values(&dst);
    let n = Checkpoint::from_model(&src).load_sparse_into(&mut dst).unwrap();
    assert_eq!(n, src.params.ids(ParamKind::Sparse).len());
    for (id, p) in dst.params.iter() {
        match p.kind {
            ParamKind::Sparse => assert_eq!(p.tensor.data(), src.params.get(id).data()),
            ParamKind::Dense => assert_eq!(p.tensor.data(), &before[id.0][..]),
        }
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let (_, cfg) = toy(13, 4);
    let model = Model::<f64>::new(cfg, 1).unwrap();
    let st = TrainState::new(&model, &TrainConfig::default());
    let bytes = checkpoint::encode(&st.to_checkpoint(&model));
    for pos in [0, 5, 9, bytes.len() / 3, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(checkpoint::decode::<f64>(&bad).is_err(), "flip at {pos}");
    }
}

#[test]
fn content_vectors_are_frozen_inputs_not_parameters() {
    let (ds, cfg) = toy(14, 10);
    let before = inputs::<f64>(&ds, &cfg);
    let mut model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let tc = TrainConfig::default();
    let mut st = TrainState::new(&model, &tc);
    train_epoch(&mut model, &mut st, &before, &[], &tc, &mut ()).unwrap();
    // no learnable tensor is shaped like the content table
    assert!(model
        .params
        .iter()
        .all(|(_, p)| p.tensor.shape() != [cfg.num_items, cfg.d_m]));
    assert_eq!(before, inputs::<f64>(&ds, &cfg));
}

