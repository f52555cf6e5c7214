use std::path::Path;

use anyhow::{Context, Result};
use est_core::data::{read_dataset, write_dataset, Dataset, GenConfig, Request};
use est_core::experiment::{self, check_compatible, featurize_all, Outcome};
use est_core::metrics::{
    append_metrics, block_erank_report, candidate_flops, count_flops, fit_power_law, full_attention_flops,
    gflops_per_batch, lca_flops, user_side_flops, write_erank, write_scaling, BehaviorScope, FlopsBreakdown,
    MetricsReport, ScalingRow,
};
use est_core::model::checkpoint::{self, peek_precision};
use est_core::model::{Arch, BlockMask, Model, ModelConfig};
use est_core::train::{evaluate, multi_epoch_train, EvalReport, Observer, TrainConfig, TrainState};
use est_core::{par, seed, Float, Precision};

use crate::config::{load_optional, ConfigFile};
use crate::exit::{NumericError, UsageError};
use crate::manifest::{beside, RunManifest};
use crate::{AblateArgs, AnalyzeArgs, Axis, EvalArgs, FlopsArgs, GenDataArgs, ScopeArg, SplitArg, SweepArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.estc";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Honours `EST_THREADS` as a cap on worker threads.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EST_THREADS") {
        let n = v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("EST_THREADS must be a positive integer, got `{v}`")))?;
        par::set_threads(n);
    }
    Ok(())
}

/// Seed of the model initialisation stream for a training seed.
pub fn init_seed(train_seed: u64) -> u64 {
    seed::derive_seed(train_seed, "model_init", 0)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn model_config(ds: &Dataset, file: &ConfigFile) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::for_data(&ds.config);
    file.apply_model(&mut cfg)?;
    cfg.validate()?;
    check_compatible(&cfg, ds)?;
    Ok(cfg)
}

fn train_config(file: &ConfigFile, epochs: Option<u32>, reset: bool, seed: Option<u64>) -> Result<TrainConfig> {
    let mut tc = TrainConfig::default();
    file.apply_train(&mut tc)?;
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    tc.multi_epoch_reset |= reset;
    if let Some(s) = seed {
        tc.seed = s;
    }
    tc.validate()?;
    Ok(tc)
}

fn manifest_with_inputs(command: &str, seed: Option<u64>, inputs: &[Option<&Path>]) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, seed);
    for p in inputs.iter().flatten() {
        m.input(p)?;
    }
    Ok(m)
}

fn check_finite(r: &EvalReport) -> Result<()> {
    if [r.auc, r.gauc, r.logloss].iter().any(|v| !v.is_finite()) {
        return Err(NumericError(format!("non-finite metrics: auc {} gauc {} logloss {}", r.auc, r.gauc, r.logloss)).into());
    }
    Ok(())
}

fn report_row<T: Float>(run_id: String, model: &Model<T>, r: &EvalReport) -> MetricsReport {
    MetricsReport {
        run_id,
        auc: r.auc,
        gauc: r.gauc,
        users_scored: r.users_scored,
        logloss: r.logloss,
        params_dense: model.dense_params(),
        gflops_per_batch: gflops_per_batch(&model.cfg),
        erank: None,
    }
}

/// Prints one line per epoch to stderr.
struct Progress;

impl<T: Float> Observer<T> for Progress {
    fn on_eval(&mut self, r: &EvalReport) {
        eprintln!(
            "epoch {} step {}: valid auc {:.4} gauc {:.4} logloss {:.4}",
            r.epoch, r.step, r.auc, r.gauc, r.logloss
        );
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let file = load_optional(a.config.as_deref())?;
    let mut cfg = GenConfig::default();
    file.apply_data(&mut cfg)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut m = manifest_with_inputs("gen-data", Some(cfg.seed), &[a.config.as_deref()])?;
    m.section("data", cfg.entries());
    m.output(&a.out);
    if let Some(csv) = &a.csv {
        m.output(csv);
    }
    m.write(&beside(&a.out))?;

    let ds = Dataset::generate(&cfg)?;
    write_dataset(&a.out, &ds).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(csv) = &a.csv {
        ds.write_csv(csv)?;
    }
    println!(
        "wrote {} requests, {} impressions to {}",
        ds.requests.len(),
        ds.impressions(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let file = load_optional(a.config.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let tc = train_config(&file, a.epochs, a.multi_epoch_reset, a.seed)?;
    let precision = match &a.resume {
        Some(p) => read_precision(p)?,
        None => model_config(&ds, &file)?.precision,
    };
    match precision {
        Precision::F32 => train_typed::<f32>(a, &file, &ds, &tc),
        Precision::F64 => train_typed::<f64>(a, &file, &ds, &tc),
    }
}

fn train_typed<T: Float>(a: &TrainArgs, file: &ConfigFile, ds: &Dataset, tc: &TrainConfig) -> Result<()> {
    let (mut model, mut state) = match &a.resume {
        Some(p) => {
            let ck = checkpoint::load::<T>(p).with_context(|| format!("reading checkpoint {}", p.display()))?;
            let mut wanted = ck.config.clone();
            file.apply_model(&mut wanted)?;
            if wanted != ck.config {
                return Err(UsageError("[model] settings differ from the checkpoint being resumed".into()).into());
            }
            TrainState::from_checkpoint(&ck, tc)?
        }
        None => {
            let model = Model::<T>::new(model_config(ds, file)?, init_seed(tc.seed))?;
            let state = TrainState::new(&model, tc);
            (model, state)
        }
    };
    check_compatible(&model.cfg, ds)?;
    if state.epoch >= tc.epochs {
        return Err(UsageError(format!(
            "checkpoint already holds {} epochs; pass --epochs above that to continue",
            state.epoch
        ))
        .into());
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let metrics_path = a.out.join(METRICS_FILE);
    let mut m = manifest_with_inputs(
        "train",
        Some(tc.seed),
        &[Some(a.data.as_path()), a.config.as_deref(), a.resume.as_deref()],
    )?;
    m.section("data", ds.config.entries());
    m.section("model", model.cfg.entries());
    m.section("train", tc.entries());
    m.output(&ckpt_path);
    m.output(&metrics_path);
    m.write(&a.out.join(MANIFEST_FILE))?;

    let data = experiment::split::<T>(&model.cfg, ds, tc.exec)?;
    let report = multi_epoch_train(&mut model, &mut state, &data.train, &data.valid, tc, &mut Progress)?;
    state.save(&model, &ckpt_path)?;
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)?;
    }
    for r in &report.epoch_evals {
        check_finite(r)?;
        append_metrics(&metrics_path, &report_row(format!("{}-e{}", model.cfg.arch, r.epoch), &model, r))?;
    }
    if let Some(r) = report.epoch_evals.last() {
        println!("auc {:.6} gauc {:.6} logloss {:.6}", r.auc, r.gauc, r.logloss);
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn read_precision(path: &Path) -> Result<Precision> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(peek_precision(&bytes).with_context(|| format!("reading checkpoint {}", path.display()))?)
}

fn load_model<T: Float>(path: &Path) -> Result<Model<T>> {
    let ck = checkpoint::load::<T>(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(ck.to_model()?)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    match read_precision(&a.ckpt)? {
        Precision::F32 => eval_typed::<f32>(a),
        Precision::F64 => eval_typed::<f64>(a),
    }
}

fn eval_typed<T: Float>(a: &EvalArgs) -> Result<()> {
    let model = load_model::<T>(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    check_compatible(&model.cfg, &ds)?;
    if let Some(out) = &a.out {
        let mut m = manifest_with_inputs("eval", None, &[Some(a.ckpt.as_path()), Some(a.data.as_path())])?;
        m.section("model", model.cfg.entries());
        m.output(out);
        m.write(&beside(out))?;
    }
    let (tr, va) = ds.split(experiment::VALID_FRACTION);
    let requests: &[Request] = match a.split {
        SplitArg::Valid => va,
        SplitArg::Train => tr,
        SplitArg::All => &ds.requests,
    };
    let exec = TrainConfig::default().exec;
    let inputs = featurize_all::<T>(&model.cfg, &ds, requests, exec)?;
    let r = evaluate(&model, &inputs, exec)?;
    check_finite(&r)?;
    let n: usize = inputs.iter().map(|r| r.candidates.len()).sum();
    println!(
        "impressions {n} users {} auc {:.6} gauc {:.6} logloss {:.6}",
        r.users_scored, r.auc, r.gauc, r.logloss
    );
    if let Some(out) = &a.out {
        append_metrics(out, &report_row(format!("eval-{}", model.cfg.arch), &model, &r))?;
    }
    Ok(())
}

/// `est`, `full`, `full-mask:NB` (or `full:NB`), several blocks joined by `+`.
pub fn parse_variant(s: &str) -> Result<Arch> {
    let norm = match s.trim().strip_prefix("full-mask") {
        Some(rest) => format!("full{rest}"),
        None => s.trim().to_string(),
    };
    norm.parse::<Arch>()
        .map_err(|e| UsageError(format!("bad --variant `{s}`: {e} (est, full, full-mask:<BB|BN|NN|NB>)")).into())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let file = load_optional(a.config.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let tc = train_config(&file, a.epochs, false, a.seed)?;
    let base = model_config(&ds, &file)?;
    let variant = ModelConfig {
        arch: parse_variant(&a.variant)?,
        ..base.clone()
    };
    let reference = ModelConfig {
        arch: Arch::Full(BlockMask::NONE),
        ..base
    };
    if let Some(out) = &a.out {
        let mut m = manifest_with_inputs("ablate", Some(tc.seed), &[Some(a.data.as_path()), a.config.as_deref()])?;
        m.section("data", ds.config.entries());
        m.section("model", variant.entries());
        m.section("reference", reference.entries());
        m.section("train", tc.entries());
        m.output(out);
        m.write(&beside(out))?;
    }
    match variant.precision {
        Precision::F32 => ablate_typed::<f32>(a, &ds, &reference, &variant, &tc),
        Precision::F64 => ablate_typed::<f64>(a, &ds, &reference, &variant, &tc),
    }
}

fn run_one<T: Float>(ds: &Dataset, cfg: &ModelConfig, tc: &TrainConfig) -> Result<Outcome<T>> {
    let data = experiment::split::<T>(cfg, ds, tc.exec)?;
    eprintln!("training {} (seed {})", cfg.arch, tc.seed);
    let out = experiment::train_and_evaluate(cfg, init_seed(tc.seed), &data, tc, &mut Progress)?;
    check_finite(&out.eval)?;
    Ok(out)
}

fn ablate_typed<T: Float>(
    a: &AblateArgs,
    ds: &Dataset,
    reference: &ModelConfig,
    variant: &ModelConfig,
    tc: &TrainConfig,
) -> Result<()> {
    let r = run_one::<T>(ds, reference, tc)?;
    let v = if variant == reference {
        r.clone()
    } else {
        run_one::<T>(ds, variant, tc)?
    };
    let (gr, gv) = (gflops_per_batch(reference), gflops_per_batch(variant));
    println!("{:<16} {:>9} {:>9} {:>12}", "run", "auc", "gauc", "gflops");
    for (name, o, g) in [("reference", &r, gr), (a.variant.as_str(), &v, gv)] {
        println!("{name:<16} {:>9.6} {:>9.6} {g:>12.6}", o.eval.auc, o.eval.gauc);
    }
    println!(
        "delta_auc {:+.6} delta_gauc {:+.6} delta_gflops {:+.6} ({:+.2}%)",
        v.eval.auc - r.eval.auc,
        v.eval.gauc - r.eval.gauc,
        gv - gr,
        100.0 * (gv - gr) / gr
    );
    if let Some(out) = &a.out {
        append_metrics(out, &report_row(format!("reference-{}-s{}", reference.arch, tc.seed), &r.model, &r.eval))?;
        append_metrics(out, &report_row(format!("{}-s{}", variant.arch, tc.seed), &v.model, &v.eval))?;
    }
    Ok(())
}

/// Planted laws checked by `sweep --selftest`.
pub const PLANTED_LAWS: [(f64, f64); 2] = [(0.61, 0.12), (0.46, 0.14)];
pub const SELFTEST_TOL: f64 = 1e-9;

fn selftest(a: &SweepArgs) -> Result<()> {
    let xs: Vec<f64> = if a.values.is_empty() {
        vec![1e3, 1e4, 1e5, 1e6, 1e7]
    } else {
        a.values.iter().map(|&v| v as f64).collect()
    };
    let mut rows = Vec::new();
    for (e, alpha) in PLANTED_LAWS {
        let ys: Vec<f64> = xs.iter().map(|x| e * x.powf(alpha)).collect();
        let fit = fit_power_law(&xs, &ys)?;
        let err = (fit.e - e).abs().max((fit.alpha - alpha).abs());
        println!(
            "planted E {e} alpha {alpha}: fitted E {:.12} alpha {:.12} r2 {:.12} max error {err:.3e}",
            fit.e, fit.alpha, fit.r2
        );
        if !(err <= SELFTEST_TOL) {
            return Err(NumericError(format!("planted law ({e}, {alpha}) recovered with error {err:e}")).into());
        }
        for (&x, &y) in xs.iter().zip(&ys) {
            rows.push(ScalingRow {
                axis: format!("planted_{e}_{alpha}"),
                x,
                delta_gauc: y,
                e: fit.e,
                alpha: fit.alpha,
                r2: fit.r2,
            });
        }
    }
    if let Some(out) = &a.out {
        write_scaling(out, &rows)?;
    }
    Ok(())
}

/// Config with the swept dimension set to `v`.
pub fn sweep_config(base: &ModelConfig, file: &ConfigFile, axis: Axis, v: usize) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::Depth => cfg.layers = v,
        Axis::Width => {
            cfg.d = v;
            if !file.model.iter().any(|(k, _)| k == "init_std") {
                cfg.init_std = 1.0 / (v as f64).sqrt();
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    if a.selftest {
        return selftest(a);
    }
    let mut values = a.values.clone();
    values.sort_unstable();
    values.dedup();
    if values.len() < 2 {
        return Err(UsageError(format!(
            "need ≥2 points for a power-law fit, got {} distinct value(s)",
            values.len()
        ))
        .into());
    }
    if a.seeds.is_empty() {
        return Err(UsageError("--seeds must list at least one seed".into()).into());
    }
    let data_path = a.data.as_deref().ok_or_else(|| UsageError("--data is required".into()))?;
    let file = load_optional(a.config.as_deref())?;
    let ds = load_dataset(data_path)?;
    let tc = train_config(&file, a.epochs, false, None)?;
    let base = model_config(&ds, &file)?;
    let configs = values
        .iter()
        .map(|&v| sweep_config(&base, &file, a.axis, v))
        .collect::<Result<Vec<_>>>()?;
    if let Some(out) = &a.out {
        let mut m = manifest_with_inputs("sweep", a.seeds.first().copied(), &[Some(data_path), a.config.as_deref()])?;
        m.section("data", ds.config.entries());
        m.section("model", base.entries());
        m.section("train", tc.entries());
        m.section(
            "sweep",
            vec![
                ("axis", format!("{:?}", a.axis).to_lowercase()),
                ("values", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
                ("seeds", a.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
            ],
        );
        m.output(out);
        m.write(&beside(out))?;
    }
    let points = match base.precision {
        Precision::F32 => sweep_typed::<f32>(&ds, &configs, &a.seeds, &tc)?,
        Precision::F64 => sweep_typed::<f64>(&ds, &configs, &a.seeds, &tc)?,
    };
    let rows = scaling_rows(a.axis, &values, &points);
    println!("{:>6} {:>10} {:>12} {:>12} {:>10}", "value", "mean_gauc", "delta_gauc", "gflops", "params");
    for (v, p) in values.iter().zip(&points) {
        println!(
            "{v:>6} {:>10.6} {:>+12.6} {:>12.6} {:>10}",
            p.mean_gauc,
            p.mean_gauc - points[0].mean_gauc,
            p.gflops,
            p.params
        );
    }
    for r in rows.iter().filter(|r| r.delta_gauc > 0.0).take(1) {
        println!("fit vs gflops: E {:.6} alpha {:.6} r2 {:.6}", r.e, r.alpha, r.r2);
    }
    if let Some(out) = &a.out {
        write_scaling(out, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub mean_gauc: f64,
    pub gflops: f64,
    pub params: usize,
}

fn sweep_typed<T: Float>(ds: &Dataset, configs: &[ModelConfig], seeds: &[u64], tc: &TrainConfig) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for cfg in configs {
        let data = experiment::split::<T>(cfg, ds, tc.exec)?;
        let mut sum = 0.0;
        let mut params = 0;
        for &s in seeds {
            let tc = TrainConfig { seed: s, ..tc.clone() };
            eprintln!("training layers {} d {} (seed {s})", cfg.layers, cfg.d);
            let o = experiment::train_and_evaluate(cfg, init_seed(s), &data, &tc, &mut Progress)?;
            check_finite(&o.eval)?;
            sum += o.eval.gauc;
            params = o.model.dense_params();
        }
        out.push(SweepPoint {
            mean_gauc: sum / seeds.len() as f64,
            gflops: gflops_per_batch(cfg),
            params,
        });
    }
    Ok(out)
}

/// Two row groups, GAUC gain against GFLOPs and against dense parameters,
/// each with its own fit over the points with a positive gain. The smallest
/// config is the baseline (gain 0) and never enters the fit. With fewer than
/// two positive gains the fit columns are NaN.
pub fn scaling_rows(axis: Axis, values: &[usize], points: &[SweepPoint]) -> Vec<ScalingRow> {
    let name = format!("{axis:?}").to_lowercase();
    let base = points[0].mean_gauc;
    let mut rows = Vec::new();
    for (suffix, xs) in [
        ("gflops", points.iter().map(|p| p.gflops).collect::<Vec<_>>()),
        ("params", points.iter().map(|p| p.params as f64).collect()),
    ] {
        let deltas: Vec<f64> = points.iter().map(|p| p.mean_gauc - base).collect();
        let (fx, fy): (Vec<f64>, Vec<f64>) = xs.iter().zip(&deltas).skip(1).filter(|(_, &d)| d > 0.0).unzip();
        let fit = fit_power_law(&fx, &fy).ok();
        if fit.is_none() {
            eprintln!(
                "warning: {name} vs {suffix}: {} of {} gains are positive; no power-law fit",
                fx.len(),
                values.len() - 1
            );
        }
        for (&x, &d) in xs.iter().zip(&deltas) {
            rows.push(ScalingRow {
                axis: format!("{name}_{suffix}"),
                x,
                delta_gauc: d,
                e: fit.map_or(f64::NAN, |f| f.e),
                alpha: fit.map_or(f64::NAN, |f| f.alpha),
                r2: fit.map_or(f64::NAN, |f| f.r2),
            });
        }
    }
    rows.sort_by(|a, b| a.axis.cmp(&b.axis).then(a.x.total_cmp(&b.x)));
    rows
}

fn print_breakdown(label: &str, f: &FlopsBreakdown) {
    println!(
        "{label:<28} {:>14} {:>14} {:>12} {:>14} {:>12} {:>12} {:>12} {:>15}",
        f.tokenize,
        f.attention,
        f.csa,
        f.ffn,
        f.head,
        f.csa_cache,
        f.elementwise,
        f.total()
    );
}

pub fn flops(a: &FlopsArgs) -> Result<()> {
    let file = load_optional(a.config.as_deref())?;
    let mut data = GenConfig::default();
    file.apply_data(&mut data)?;
    let mut cfg = if a.reference {
        ModelConfig::reference(&data)
    } else {
        ModelConfig::for_data(&data)
    };
    file.apply_model(&mut cfg)?;
    cfg.validate()?;
    let n = a.candidates.unwrap_or(data.candidates_per_request as usize);
    let (d, ln, lb) = (cfg.d, cfg.l_n(), cfg.l_b());

    println!(
        "arch {} layers {} d {} heads {} k {} L_N {ln} L_bu {} L_bc {} candidates {n}",
        cfg.arch, cfg.layers, d, cfg.heads, cfg.k, cfg.l_bu, cfg.l_bc
    );
    let user = user_side_flops(&cfg);
    let cand = candidate_flops(&cfg);
    let layers = cfg.layers.max(1) as u64;
    println!("\nper layer (matmul FLOPs)");
    println!("{:>5} {:>16} {:>14} {:>14} {:>16} {:>14} {:>14}", "layer", "user_attention", "user_csa", "user_ffn", "cand_attention", "cand_csa", "cand_ffn");
    for l in 0..cfg.layers {
        println!(
            "{l:>5} {:>16} {:>14} {:>14} {:>16} {:>14} {:>14}",
            user.attention / layers,
            user.csa / layers,
            user.ffn / layers,
            cand.attention / layers,
            cand.csa / layers,
            cand.ffn / layers
        );
    }
    println!(
        "\nclosed forms at L_N {ln}, L_B {lb}, d {d}: cross-attention {} vs full self-attention over {} tokens {} ({:.2}% less)",
        lca_flops(ln, lb, d),
        ln + lb,
        full_attention_flops(ln + lb, d),
        100.0 * (1.0 - lca_flops(ln, lb, d) as f64 / full_attention_flops(ln + lb, d) as f64)
    );

    println!(
        "\n{:<28} {:>14} {:>14} {:>12} {:>14} {:>12} {:>12} {:>12} {:>15}",
        "totals", "tokenize", "attention", "csa", "ffn", "head", "csa_cache", "elementwise", "total"
    );
    print_breakdown("user side (once)", &user);
    print_breakdown("per candidate", &cand);
    let naive = count_flops(&cfg, n, false);
    let dec = count_flops(&cfg, n, true);
    print_breakdown("request, per-candidate", &naive);
    print_breakdown("request, decoupled", &dec);
    let full_cfg = ModelConfig {
        arch: Arch::Full(BlockMask::NONE),
        ..cfg.clone()
    };
    let full = count_flops(&full_cfg, n, false);
    print_breakdown("request, full attention", &full);
    println!(
        "\ndecoupled vs per-candidate: {:.2}% less; vs full attention: {:.2}% less; gflops per batch {:.6}",
        100.0 * (1.0 - dec.total() as f64 / naive.total() as f64),
        100.0 * (1.0 - dec.total() as f64 / full.total() as f64),
        gflops_per_batch(&cfg)
    );
    Ok(())
}

pub fn analyze_attention(a: &AnalyzeArgs) -> Result<()> {
    match read_precision(&a.ckpt)? {
        Precision::F32 => analyze_typed::<f32>(a),
        Precision::F64 => analyze_typed::<f64>(a),
    }
}

fn analyze_typed<T: Float>(a: &AnalyzeArgs) -> Result<()> {
    let model = load_model::<T>(&a.ckpt)?;
    if !matches!(model.cfg.arch, Arch::Full(_)) {
        return Err(UsageError(format!(
            "attention analysis needs a full-attention checkpoint, got arch `{}`",
            model.cfg.arch
        ))
        .into());
    }
    let ds = load_dataset(&a.data)?;
    check_compatible(&model.cfg, &ds)?;
    let mut m = manifest_with_inputs("analyze-attention", None, &[Some(a.ckpt.as_path()), Some(a.data.as_path())])?;
    m.section("model", model.cfg.entries());
    m.section(
        "analysis",
        vec![
            ("requests", a.requests.to_string()),
            ("scope", format!("{:?}", a.scope).to_lowercase()),
        ],
    );
    m.output(&a.out);
    m.write(&beside(&a.out))?;

    let (_, va) = ds.split(experiment::VALID_FRACTION);
    let take = &va[..a.requests.min(va.len())];
    let inputs = featurize_all::<T>(&model.cfg, &ds, take, TrainConfig::default().exec)?;
    let scope = match a.scope {
        ScopeArg::Candidate => BehaviorScope::Candidate,
        ScopeArg::All => BehaviorScope::All,
    };
    let rows = block_erank_report(&model, &inputs, scope)?;
    if rows.iter().any(|r| !r.erank.is_finite()) {
        return Err(NumericError("non-finite effective rank".into()).into());
    }
    write_erank(&a.out, &rows)?;
    for r in &rows {
        println!("layer {} block {} erank {:.6}", r.layer, r.block, r.erank);
    }
    Ok(())
}
