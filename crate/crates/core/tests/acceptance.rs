//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `FHN_ACCEPTANCE=1,5,6` restricts the run to the listed criteria. MNIST is
//! read from `FHN_MNIST_DIR` or `data/mnist` (see `scripts/fetch_mnist.sh`).

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fhn_hybrid::config::ExperimentConfig;
use fhn_hybrid::dataset::{
    self, balanced_subset, load_mnist, parse_idx_images, parse_idx_labels, Mnist, IMAGE_LEN, N_CLASSES,
};
use fhn_hybrid::experiments as ex;
use fhn_hybrid::fhn::{
    classify_regime, fhn_vector_field, fixed_point, integrate, oscillation_amplitude, FhnParams, FhnState,
    Regime,
};
use fhn_hybrid::hybrid::{
    evaluate, mse_cost, surrogate_backward, surrogate_forward_with, AccuracyReport, HiddenPath, HybridConfig,
    HybridEpoch, HybridNet,
};
use fhn_hybrid::nn::{dense_accuracy, one_hot, DenseNet};
use fhn_hybrid::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REFERENCE_EMBED_ACCURACY: f64 = 73.3;
const EMBED_TOLERANCE: f64 = 15.0;
const EMBED_TEST_PER_CLASS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn log(line: &str) {
    println!("    {line}");
}

/// State shared between criteria so the baseline and the embedding slice are
/// computed once.
struct Context {
    data: Option<Mnist>,
    data_dir: Option<PathBuf>,
    baseline: Option<DenseNet>,
    embed_cache: BTreeMap<u64, AccuracyReport>,
}

impl Context {
    fn data(&mut self) -> Result<&Mnist, String> {
        if self.data.is_none() {
            let dir = self
                .data_dir
                .clone()
                .ok_or("MNIST not found: set FHN_MNIST_DIR or run scripts/fetch_mnist.sh")?;
            self.data = Some(load_mnist(&dir).map_err(|e| e.to_string())?);
        }
        Ok(self.data.as_ref().unwrap())
    }

    fn baseline(&mut self) -> Result<&DenseNet, String> {
        if self.baseline.is_none() {
            let cfg = ExperimentConfig::default();
            let data = self.data()?;
            let (net, _) =
                ex::train_baseline_stage(&cfg, data, &mut |l: &str| log(l)).map_err(|e| e.to_string())?;
            self.baseline = Some(net);
        }
        Ok(self.baseline.as_ref().unwrap())
    }

    /// Class-averaged accuracy of the embedded network on the balanced
    /// 2000-image test slice, memoised by γ.
    fn embedded_accuracy(&mut self, gamma: f64) -> Result<f64, String> {
        if let Some(r) = self.embed_cache.get(&gamma.to_bits()) {
            return Ok(r.average_percent());
        }
        let cfg = ExperimentConfig::default();
        let baseline = self.baseline()?.clone();
        let slice =
            balanced_subset(&self.data()?.test, EMBED_TEST_PER_CLASS, cfg.seed).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let net = HybridNet::embed(&baseline, cfg.embed_config(gamma).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let report = evaluate(&net, &slice).map_err(|e| e.to_string())?;
        log(&format!(
            "embedded γ = {gamma}: {:.2}% on {} test images ({:.0} s)",
            report.average_percent(),
            slice.len(),
            t.elapsed().as_secs_f64()
        ));
        self.embed_cache.insert(gamma.to_bits(), report);
        Ok(report.average_percent())
    }
}

fn criterion_1(ctx: &mut Context) -> Result<Outcome, String> {
    let t = Instant::now();
    let net = ctx.baseline()?.clone();
    let secs = t.elapsed().as_secs_f64();
    let acc = 100.0 * dense_accuracy(&net, &ctx.data()?.test).map_err(|e| e.to_string())?;
    Ok(Outcome::new(
        acc >= 95.0,
        format!("baseline test accuracy {acc:.2}% on 10000 images (need >= 95.00), trained in {secs:.0} s"),
    ))
}

fn criterion_2(ctx: &mut Context) -> Result<Outcome, String> {
    let acc = ctx.embedded_accuracy(-0.5)?;
    let dev = acc - REFERENCE_EMBED_ACCURACY;
    Ok(Outcome::new(
        dev.abs() <= EMBED_TOLERANCE,
        format!("γ = -0.5 embedded accuracy {acc:.2}% ({dev:+.2} from {REFERENCE_EMBED_ACCURACY}, tolerance ±{EMBED_TOLERANCE})"),
    ))
}

fn criterion_3(ctx: &mut Context) -> Result<Outcome, String> {
    let grid: [f64; 9] = [-2.0, -1.75, -1.5, -1.25, -1.0, -0.75, -0.5, -0.25, 0.5];
    let mut acc = BTreeMap::new();
    for g in grid {
        acc.insert(g.to_bits(), ctx.embedded_accuracy(g)?);
    }
    let at = |g: f64| acc[&f64::to_bits(g)];
    let mut failures = Vec::new();
    if !(at(-1.0) > at(-0.5) && at(-0.5) > at(0.5)) {
        failures.push("acc(-1) > acc(-0.5) > acc(+0.5) violated".to_string());
    }
    if at(0.5) >= 15.0 {
        failures.push(format!("acc(+0.5) = {:.2} not < 15", at(0.5)));
    }
    for pair in [-0.25, -0.5, -0.75, -1.0].windows(2) {
        if at(pair[1]) < at(pair[0]) {
            failures.push(format!("acc({}) < acc({})", pair[1], pair[0]));
        }
    }
    let plateau = (at(-1.5) - at(-2.0)).abs();
    if plateau >= 5.0 {
        failures.push(format!("|acc(-1.5) - acc(-2)| = {plateau:.2} not < 5"));
    }
    let summary: Vec<String> = grid.iter().map(|&g| format!("{g}:{:.1}", at(g))).collect();
    let detail = if failures.is_empty() {
        format!("sweep {}", summary.join(" "))
    } else {
        format!("{} | sweep {}", failures.join("; "), summary.join(" "))
    };
    Ok(Outcome::new(failures.is_empty(), detail))
}

fn moving_average_non_increasing(history: &[HybridEpoch], window: usize) -> bool {
    let costs: Vec<f64> = history.iter().map(|e| e.cost).collect();
    if costs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    if costs.len() < window {
        return true;
    }
    let avgs: Vec<f64> = costs
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    avgs.windows(2).all(|w| w[1] <= w[0])
}

fn hybrid_run(ctx: &mut Context, cfg: &ExperimentConfig) -> Result<(f64, f64, bool), String> {
    let baseline = ctx.baseline()?.clone();
    let (train, test) = ex::hybrid_sets(cfg, ctx.data()?).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let (_, history) = ex::train_hybrid_stage(cfg, &train, &test, Some(&baseline), &mut |l: &str| log(l))
        .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let last = history.last().ok_or("empty training history")?;
    Ok((
        last.test_accuracy,
        secs,
        moving_average_non_increasing(&history, 5),
    ))
}

fn criterion_4(ctx: &mut Context) -> Result<Outcome, String> {
    let untrained = ctx.embedded_accuracy(-0.5)?;

    log("full profile: 10000/1000 sets, t_control = 100");
    let full_cfg = ExperimentConfig::default();
    let (full_acc, full_secs, full_ma) = hybrid_run(ctx, &full_cfg)?;

    log("fast profile: 2000/500 sets, t_control = 50");
    let mut fast_cfg = ExperimentConfig::default();
    fast_cfg.apply_fast_profile();
    let (fast_acc, fast_secs, _) = hybrid_run(ctx, &fast_cfg)?;

    let full_ok = full_acc >= 70.0 && full_acc > untrained;
    let fast_ok = fast_acc > untrained && fast_secs < 30.0 * 60.0;
    Ok(Outcome::new(
        full_ok && fast_ok,
        format!(
            "full: {full_acc:.2}% in {:.0} min (need >= 70 and > untrained {untrained:.2}; \
             cost 5-epoch average non-increasing: {full_ma}); \
             fast: {fast_acc:.2}% in {:.1} min (need > {untrained:.2}, < 30 min)",
            full_secs / 60.0,
            fast_secs / 60.0
        ),
    ))
}

/// Classical RK4 written out longhand.
fn reference_rk4(state: (f64, f64), eps: f64, a: f64, duration: f64, dt: f64) -> (f64, f64) {
    let f = |x: f64, y: f64| ((x - x * x * x / 3.0 - y) / eps, x + a);
    let (mut x, mut y) = state;
    for _ in 0..(duration / dt).round() as usize {
        let (k1x, k1y) = f(x, y);
        let (k2x, k2y) = f(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
        let (k3x, k3y) = f(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
        let (k4x, k4y) = f(x + dt * k3x, y + dt * k3y);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    }
    (x, y)
}

fn criterion_5(_: &mut Context) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = |err: Error| err.to_string();

    let mut worst_residual = 0.0f64;
    for _ in 0..1000 {
        let (a, drive) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let p = FhnParams::new(0.05, a).map_err(e)?;
        let (dx, dy) = fhn_vector_field(fixed_point(&p, drive), &p, drive);
        worst_residual = worst_residual.max(dx.abs()).max(dy.abs());
    }

    let mut worst_factor = f64::INFINITY;
    let p = FhnParams::new(0.05, 0.5).map_err(e)?;
    for _ in 0..20 {
        let start = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let reference = reference_rk4(start, 0.05, 0.5, 10.0, 1e-5);
        let err = |dt: f64| -> Result<f64, String> {
            let s = integrate(FhnState::new(start.0, start.1), &p, 0.0, 10.0, dt).map_err(e)?;
            Ok((s.x - reference.0).hypot(s.y - reference.1))
        };
        worst_factor = worst_factor.min(err(0.01)? / err(0.005)?);
    }

    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..=40 {
        let a = -2.0 + 0.1 * i as f64;
        for j in 0..=20 {
            let drive = -1.0 + 0.1 * j as f64;
            if ((a + drive).abs() - 1.0).abs() <= 0.02 {
                continue;
            }
            let p = FhnParams::new(0.05, a).map_err(e)?;
            let fp = fixed_point(&p, drive);
            let amp = oscillation_amplitude(FhnState::new(fp.x + 0.05, fp.y), &p, drive, 200.0, 100.0, 0.01)
                .map_err(e)?;
            let observed = if amp > 0.5 {
                Regime::Oscillatory
            } else {
                Regime::Excitable
            };
            total += 1;
            agree += usize::from(classify_regime(&p, drive) == observed);
        }
    }

    Ok(Outcome::new(
        worst_residual <= 1e-12 && worst_factor >= 12.0 && agree == total,
        format!(
            "max fixed-point residual {worst_residual:.1e} (<= 1e-12); \
             min RK4 halving factor {worst_factor:.2} (>= 12); \
             regime agreement {agree}/{total}"
        ),
    ))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// The network with σ(z) in place of the oscillators, from raw parameters.
fn surrogate_loss(net: &HybridNet, image: &[f64], target: &[f64]) -> f64 {
    let (l1, l3) = (net.input_stage(), net.output_stage());
    let mut logits = l3.bias().to_vec();
    for j in 0..l1.fan_out() {
        let mut z = l1.bias()[j];
        for (i, p) in image.iter().enumerate() {
            z += p.tanh() * l1.weight(i, j);
        }
        let a3 = sigmoid(sigmoid(z));
        for (k, logit) in logits.iter_mut().enumerate() {
            *logit += a3 * l3.weight(j, k);
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter()
        .zip(target)
        .map(|(e, t)| 0.5 * (e / sum - t).powi(2))
        .sum()
}

fn criterion_6(_: &mut Context) -> Result<Outcome, String> {
    const H: f64 = 1e-6;
    // Roundoff of a central difference on a loss of magnitude <= 1.
    const FLOOR: f64 = 8.0 * f64::EPSILON / (2.0 * H);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut checked, mut failed) = (0.0f64, 0usize, 0usize);
    for net_idx in 0..10u64 {
        let cfg = HybridConfig {
            n_hidden: 6,
            ..HybridConfig::default()
        };
        let mut net = HybridNet::trainable(cfg, 200 + net_idx).map_err(|e| e.to_string())?;
        net.scale_output_stage(8.0);
        for _ in 0..10 {
            let image: Vec<f64> = (0..IMAGE_LEN)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        0.0
                    } else {
                        rng.gen_range(0.0..1.0)
                    }
                })
                .collect();
            let target = one_hot(rng.gen_range(0..10u8));
            let cache =
                surrogate_forward_with(&net, &image, HiddenPath::Sigmoid).map_err(|e| e.to_string())?;
            if (mse_cost(&cache.output, &target) - surrogate_loss(&net, &image, &target)).abs() > 1e-12 {
                return Ok(Outcome::new(
                    false,
                    "library loss disagrees with the longhand surrogate",
                ));
            }
            let grads = surrogate_backward(&net, &cache, &target).map_err(|e| e.to_string())?;
            let mut check = |analytic: f64, perturb: &dyn Fn(&mut HybridNet, f64)| {
                let (mut p, mut m) = (net.clone(), net.clone());
                perturb(&mut p, H);
                perturb(&mut m, -H);
                let fd =
                    (surrogate_loss(&p, &image, &target) - surrogate_loss(&m, &image, &target)) / (2.0 * H);
                let diff = (analytic - fd).abs();
                let scale = analytic.abs().max(fd.abs());
                checked += 1;
                if scale * 1e-4 >= FLOOR {
                    worst = worst.max(diff / scale);
                }
                if diff > FLOOR && diff > 1e-4 * scale {
                    failed += 1;
                }
            };
            for k in 0..grads.w3.weights.len() {
                check(grads.w3.weights[k], &|n, h| {
                    n.output_stage_mut().weights_mut()[k] += h
                });
            }
            for k in 0..grads.w3.bias.len() {
                check(grads.w3.bias[k], &|n, h| n.output_stage_mut().bias_mut()[k] += h);
            }
            for k in 0..grads.w1.bias.len() {
                check(grads.w1.bias[k], &|n, h| n.input_stage_mut().bias_mut()[k] += h);
            }
            for _ in 0..40 {
                let k = rng.gen_range(0..grads.w1.weights.len());
                check(grads.w1.weights[k], &|n, h| {
                    n.input_stage_mut().weights_mut()[k] += h
                });
            }
        }
    }
    Ok(Outcome::new(
        failed == 0,
        format!(
            "{checked} partials over 10 nets x 10 inputs; worst relative error {worst:.1e} \
             among partials whose 1e-4 band exceeds the roundoff floor (tolerance 1e-4); {failed} failures"
        ),
    ))
}

fn raw_idx(dir: &Path, stem: &str) -> Result<Vec<u8>, String> {
    let path = dataset::locate(dir, stem).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| e.to_string())?;
        return Ok(out);
    }
    Ok(bytes)
}

fn criterion_7(ctx: &mut Context) -> Result<Outcome, String> {
    let dir = ctx
        .data_dir
        .clone()
        .ok_or("MNIST not found: set FHN_MNIST_DIR or run scripts/fetch_mnist.sh")?;
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for (images_stem, labels_stem) in [
        (dataset::TRAIN_IMAGES, dataset::TRAIN_LABELS),
        (dataset::TEST_IMAGES, dataset::TEST_LABELS),
    ] {
        let raw_images = raw_idx(&dir, images_stem)?;
        let raw_labels = raw_idx(&dir, labels_stem)?;
        let ds = dataset::LabeledDataset::new(
            parse_idx_images(&raw_images).map_err(|e| e.to_string())?,
            parse_idx_labels(&raw_labels).map_err(|e| e.to_string())?,
            images_stem,
        )
        .map_err(|e| e.to_string())?;
        if ds.to_idx_images() != raw_images || ds.to_idx_labels() != raw_labels {
            failures.push(format!("{images_stem}: re-encoded bytes differ"));
        }
        counts.push(ds.len());
    }
    if counts != [60000, 10000] {
        failures.push(format!("counts {counts:?}, expected [60000, 10000]"));
    }
    let data = ctx.data()?;
    for per_class in [1, 100, 1000] {
        let sub = balanced_subset(&data.train, per_class, 42).map_err(|e| e.to_string())?;
        if sub.class_counts() != [per_class; N_CLASSES] {
            failures.push(format!(
                "balanced_subset({per_class}) histogram {:?}",
                sub.class_counts()
            ));
        }
    }
    match balanced_subset(&data.test, 2000, 42) {
        Err(Error::InsufficientClass { .. }) => {}
        other => failures.push(format!(
            "oversized request not rejected: {:?}",
            other.map(|d| d.len())
        )),
    }
    let detail = if failures.is_empty() {
        format!("byte-exact round trip of all four files; counts {counts:?}; exact per-class histograms")
    } else {
        failures.join("; ")
    };
    Ok(Outcome::new(failures.is_empty(), detail))
}

fn csv_files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn criterion_8(ctx: &mut Context) -> Result<Outcome, String> {
    let dir = ctx
        .data_dir
        .clone()
        .ok_or("MNIST not found: set FHN_MNIST_DIR or run scripts/fetch_mnist.sh")?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let mut cfg = ExperimentConfig::default();
        let text = "t_transient = 20\nhybrid_t_transient = 20\nt_control = 5\nepochs = 1\n\
                    hybrid_epochs = 2\neval_per_class = 2\nhybrid_train_per_class = 3\n\
                    hybrid_test_per_class = 2\ngammas = -1, -0.5, 0.5\nreport_full_sets = false\n";
        cfg.apply_text(text).map_err(|e| e.to_string())?;
        cfg.data_dir = dir.clone();
        cfg.out_dir = tmp.path().join(name);
        ex::run_all(&cfg, &mut |_: &str| {}).map_err(|e| e.to_string())?;
        runs.push(csv_files(&cfg.out_dir)?);
    }
    let names: BTreeSet<&String> = runs[0].keys().chain(runs[1].keys()).collect();
    let differing: Vec<&String> = names
        .iter()
        .copied()
        .filter(|n| runs[0].get(*n) != runs[1].get(*n))
        .collect();
    Ok(Outcome::new(
        differing.is_empty() && !runs[0].is_empty(),
        if differing.is_empty() {
            format!(
                "{} CSV artifacts byte-identical across two run-all invocations",
                runs[0].len()
            )
        } else {
            format!("differing artifacts: {differing:?}")
        },
    ))
}

type Criterion = fn(&mut Context) -> Result<Outcome, String>;

fn main() {
    let criteria: [(u8, &str, Criterion); 8] = [
        (1, "baseline accuracy", criterion_1),
        (2, "embedding at γ = -0.5", criterion_2),
        (3, "γ ordering and saturation", criterion_3),
        (4, "hybrid training", criterion_4),
        (5, "FHN oracle suite", criterion_5),
        (6, "gradient oracle", criterion_6),
        (7, "IDX parser suite", criterion_7),
        (8, "run-all determinism", criterion_8),
    ];
    let selected: Option<BTreeSet<u8>> = std::env::var("FHN_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut ctx = Context {
        data: None,
        data_dir: common::mnist_dir(),
        baseline: None,
        embed_cache: BTreeMap::new(),
    };
    let mut lines = Vec::new();
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        println!("criterion {id}: {name}");
        let t = Instant::now();
        let outcome = run(&mut ctx).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let line = format!(
            "{} criterion {id} ({name}): {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((outcome.pass, line));
    }
    println!("\nacceptance summary");
    for (_, line) in &lines {
        println!("{line}");
    }
    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!("{} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
