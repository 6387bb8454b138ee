//! End-to-end experiment stages and their CSV artifacts.
//!
//! Every CSV starts with `# config_hash=<hash>` and has a header whose column
//! names carry their units. Artifacts live under `out_dir/{weights,tables,curves}`
//! and are listed, with SHA-256 digests, in `out_dir/manifest.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, InitKind};
use crate::dataset::{self, balanced_subset, LabeledDataset, Mnist, N_CLASSES};
use crate::error::{Error, Result};
use crate::fhn::{self, FhnState};
use crate::hybrid::{self, evaluate, AccuracyReport, HybridEpoch, HybridInit, HybridNet};
use crate::nn::{self, DenseNet, EpochRecord};

pub const BASELINE_WEIGHTS: &str = "weights/baseline.fhnw";
pub const HYBRID_WEIGHTS: &str = "weights/hybrid.fhnh";
pub const BASELINE_HISTORY: &str = "curves/baseline_history.csv";
pub const TABLE1: &str = "tables/table1_embedding.csv";
pub const GAMMA_SWEEP: &str = "curves/gamma_sweep.csv";
pub const NULLCLINES: &str = "curves/phase_nullclines.csv";
pub const TRAJECTORY: &str = "curves/phase_trajectory.csv";
pub const HYBRID_HISTORY: &str = "curves/hybrid_history.csv";
pub const TABLE2: &str = "tables/table2_hybrid.csv";
pub const PER_DIGIT_BARS: &str = "curves/hybrid_per_digit_test.csv";
pub const MANIFEST: &str = "manifest.txt";

/// Progress sink; one human-readable line per call.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// A CSV document with leading `#` comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(config_hash: &str, header: &[&str]) -> Self {
        Self {
            comments: vec![format!("config_hash={config_hash}")],
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(mut self, line: impl Into<String>) -> Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Percentages with four decimals.
pub fn pct(v: f64) -> String {
    format!("{v:.4}")
}

/// Nine significant digits.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifact directory plus a record of everything written to it.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["weights", "tables", "curves"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_csv(&mut self, rel: &str, table: &CsvTable) -> Result<PathBuf> {
        self.write(rel, table.render().as_bytes())
    }

    /// Records a file some other writer produced.
    pub fn register(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.written.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(path)
    }

    /// Relative path → SHA-256 of every artifact written so far.
    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.written
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub config: ExperimentConfig,
    pub artifacts: BTreeMap<String, String>,
    /// Input file name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Stage name → seconds.
    pub timings: Vec<(String, f64)>,
}

impl ExperimentManifest {
    /// Sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        entries.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        entries.insert("seed".into(), self.config.seed.to_string());
        entries.insert("config_hash".into(), self.config.hash());
        for (k, v) in self.config.entries() {
            entries.insert(format!("config.{k}"), v);
        }
        for (k, v) in &self.artifacts {
            entries.insert(format!("artifact.{k}"), v.clone());
        }
        for (k, v) in &self.inputs {
            entries.insert(format!("input.{k}"), v.clone());
        }
        for (k, v) in &self.timings {
            entries.insert(format!("timing.{k}_s"), format!("{v:.3}"));
        }
        entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// SHA-256 of the four MNIST files in `dir`.
pub fn hash_inputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for stem in [
        dataset::TRAIN_IMAGES,
        dataset::TRAIN_LABELS,
        dataset::TEST_IMAGES,
        dataset::TEST_LABELS,
    ] {
        let path = dataset::locate(dir, stem)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.insert(stem.to_string(), sha256_hex(&bytes));
    }
    Ok(out)
}

/// The embedding evaluation slices: balanced `eval_per_class` subsets, or the
/// complete splits when `cfg.full` is set.
pub fn evaluation_slices(cfg: &ExperimentConfig, data: &Mnist) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.full {
        return Ok((data.train.clone(), data.test.clone()));
    }
    Ok((
        balanced_subset(&data.train, cfg.eval_per_class, cfg.seed)?,
        balanced_subset(&data.test, cfg.eval_per_class, cfg.seed)?,
    ))
}

/// The truncated hybrid training and test sets.
pub fn hybrid_sets(cfg: &ExperimentConfig, data: &Mnist) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((
        balanced_subset(&data.train, cfg.hybrid_train_per_class, cfg.seed)?,
        balanced_subset(&data.test, cfg.hybrid_test_per_class, cfg.seed)?,
    ))
}

/// The "full" report sets: the complete splits, or balanced
/// `eval_per_class` slices when `report_full_sets` is off.
pub fn report_full_sets(cfg: &ExperimentConfig, data: &Mnist) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.report_full_sets {
        return Ok((data.train.clone(), data.test.clone()));
    }
    Ok((
        balanced_subset(&data.train, cfg.eval_per_class, cfg.seed)?,
        balanced_subset(&data.test, cfg.eval_per_class, cfg.seed)?,
    ))
}

pub fn train_baseline_stage(
    cfg: &ExperimentConfig,
    data: &Mnist,
    progress: Progress,
) -> Result<(DenseNet, Vec<EpochRecord>)> {
    let tcfg = cfg.baseline_train_config();
    let mut net = DenseNet::baseline(tcfg.seed);
    if !tcfg.use_bias {
        net.zero_biases();
    }
    let history = nn::train_dense(&mut net, &data.train, &data.test, &tcfg, |r| {
        progress(&format!(
            "baseline epoch {:>3}: cost {:.6} train {:.2}% test {:.2}%",
            r.epoch,
            r.cost,
            100.0 * r.train_accuracy,
            100.0 * r.test_accuracy
        ))
    })?;
    Ok((net, history))
}

pub fn baseline_history_csv(history: &[EpochRecord], config_hash: &str) -> CsvTable {
    let mut t = CsvTable::new(
        config_hash,
        &[
            "epoch",
            "cost_cross_entropy",
            "train_accuracy_pct",
            "test_accuracy_pct",
        ],
    );
    for r in history {
        t.push(vec![
            r.epoch.to_string(),
            sig9(r.cost),
            pct(100.0 * r.train_accuracy),
            pct(100.0 * r.test_accuracy),
        ]);
    }
    t
}

/// Train and test reports of the embedded network at one γ.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Column {
    pub gamma: f64,
    pub train: AccuracyReport,
    pub test: AccuracyReport,
}

/// Per-digit accuracy of the embedded network for each of `cfg.table1_gammas`.
/// Test reports are added to `cache`, keyed by γ bits, for reuse by the sweep.
pub fn reproduce_table1(
    baseline: &DenseNet,
    ds_train: &LabeledDataset,
    ds_test: &LabeledDataset,
    cfg: &ExperimentConfig,
    cache: &mut BTreeMap<u64, AccuracyReport>,
    progress: Progress,
) -> Result<Vec<Table1Column>> {
    let mut columns = Vec::with_capacity(cfg.table1_gammas.len());
    for &gamma in &cfg.table1_gammas {
        let net = HybridNet::embed(baseline, cfg.embed_config(gamma)?)?;
        let train = evaluate(&net, ds_train)?;
        let test = match cache.get(&gamma.to_bits()) {
            Some(r) => *r,
            None => evaluate(&net, ds_test)?,
        };
        cache.insert(gamma.to_bits(), test);
        progress(&format!(
            "embedding γ = {gamma}: train {:.2}% test {:.2}% (class-averaged)",
            train.average_percent(),
            test.average_percent()
        ));
        columns.push(Table1Column { gamma, train, test });
    }
    Ok(columns)
}

pub fn table1_csv(columns: &[Table1Column], n_train: usize, n_test: usize, config_hash: &str) -> CsvTable {
    let mut header = vec!["digit".to_string()];
    for c in columns {
        header.push(format!("train_gamma_{}_pct", c.gamma));
        header.push(format!("test_gamma_{}_pct", c.gamma));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = CsvTable::new(config_hash, &header_refs)
        .comment(format!("train_images={n_train} test_images={n_test}"));
    let per: Vec<([f64; N_CLASSES], [f64; N_CLASSES])> = columns
        .iter()
        .map(|c| (c.train.per_digit_percent(), c.test.per_digit_percent()))
        .collect();
    for digit in 0..N_CLASSES {
        let mut row = vec![digit.to_string()];
        for (tr, te) in &per {
            row.push(pct(tr[digit]));
            row.push(pct(te[digit]));
        }
        t.push(row);
    }
    let mut avg = vec!["average".to_string()];
    for c in columns {
        avg.push(pct(c.train.average_percent()));
        avg.push(pct(c.test.average_percent()));
    }
    t.push(avg);
    t
}

/// Embedded-network test accuracy for each γ in `gammas`, reusing `cache`.
pub fn sweep_gammas(
    baseline: &DenseNet,
    ds_test: &LabeledDataset,
    cfg: &ExperimentConfig,
    gammas: &[f64],
    cache: &mut BTreeMap<u64, AccuracyReport>,
    progress: Progress,
) -> Result<Vec<(f64, AccuracyReport)>> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("gamma list is empty".into()));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let report = match cache.get(&gamma.to_bits()) {
            Some(r) => *r,
            None => {
                let net = HybridNet::embed(baseline, cfg.embed_config(gamma)?)?;
                let r = evaluate(&net, ds_test)?;
                cache.insert(gamma.to_bits(), r);
                r
            }
        };
        progress(&format!("sweep γ = {gamma}: {:.2}%", report.average_percent()));
        rows.push((gamma, report));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[(f64, AccuracyReport)], n_test: usize, config_hash: &str) -> CsvTable {
    let mut t = CsvTable::new(
        config_hash,
        &["gamma", "average_accuracy_pct", "overall_accuracy_pct"],
    )
    .comment(format!("test_images={n_test}"));
    for (gamma, r) in rows {
        t.push(vec![
            gamma.to_string(),
            pct(r.average_percent()),
            pct(r.overall_percent()),
        ]);
    }
    t
}

/// Options of the phase-portrait output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortraitSpec {
    pub drive: f64,
    pub initial: FhnState,
    pub duration: f64,
    pub stride: usize,
    pub x_range: (f64, f64),
    pub n_points: usize,
}

impl Default for PortraitSpec {
    fn default() -> Self {
        Self {
            drive: 0.0,
            initial: FhnState::new(0.5, 0.0),
            duration: 50.0,
            stride: 10,
            x_range: (-2.5, 2.5),
            n_points: 501,
        }
    }
}

/// Activator nullcline CSV and sampled trajectory CSV.
pub fn phase_portrait(cfg: &ExperimentConfig, spec: &PortraitSpec) -> Result<(CsvTable, CsvTable)> {
    let params = cfg.fhn_params()?;
    let table = fhn::nullcline_data(&params, spec.drive, spec.x_range, spec.n_points)?;
    let hash = cfg.hash();
    let regime = match fhn::classify_regime(&params, spec.drive) {
        fhn::Regime::Oscillatory => "oscillatory",
        fhn::Regime::Excitable => "excitable",
    };
    let mut null = CsvTable::new(&hash, &["x", "y_nullcline_activator"])
        .comment(format!(
            "epsilon={} a={} drive_I={} regime={regime}",
            params.epsilon(),
            params.a(),
            spec.drive
        ))
        .comment(format!("inhibitor_nullcline_x={}", sig9(table.inhibitor_x)));
    for (x, y) in &table.activator {
        null.push(vec![sig9(*x), sig9(*y)]);
    }
    let samples = fhn::sample_trajectory(
        spec.initial,
        &params,
        spec.drive,
        spec.duration,
        cfg.dt,
        spec.stride,
    )?;
    let mut traj = CsvTable::new(&hash, &["t", "x", "y"]).comment(format!(
        "dimensionless time; dt={} x0={} y0={} drive_I={}",
        cfg.dt, spec.initial.x, spec.initial.y, spec.drive
    ));
    for (t, x, y) in samples {
        traj.push(vec![sig9(t), sig9(x), sig9(y)]);
    }
    Ok((null, traj))
}

/// Trains the hybrid network on the truncated sets.
pub fn train_hybrid_stage(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    baseline: Option<&DenseNet>,
    progress: Progress,
) -> Result<(HybridNet, Vec<HybridEpoch>)> {
    let init = match (cfg.hybrid_init, baseline) {
        (InitKind::Fresh, _) => HybridInit::Fresh,
        (InitKind::Baseline, Some(b)) => HybridInit::FromBaseline(b.clone()),
        (InitKind::Baseline, None) => {
            return Err(Error::Config(
                "hybrid_init = baseline needs trained baseline weights".into(),
            ))
        }
    };
    hybrid::train_hybrid(
        train,
        test,
        cfg.hybrid_config()?,
        &cfg.hybrid_train_config(),
        &init,
        |e| {
            progress(&format!(
                "hybrid epoch {:>3}: cost {:.6} train {:.2}% test {:.2}%",
                e.epoch, e.cost, e.train_accuracy, e.test_accuracy
            ))
        },
    )
}

pub fn hybrid_history_csv(history: &[HybridEpoch], config_hash: &str) -> CsvTable {
    let mut t = CsvTable::new(
        config_hash,
        &["epoch", "cost_mse", "train_accuracy_pct", "test_accuracy_pct"],
    )
    .comment("accuracies are class-averaged temporal-majority readouts");
    for e in history {
        t.push(vec![
            e.epoch.to_string(),
            sig9(e.cost),
            pct(e.train_accuracy),
            pct(e.test_accuracy),
        ]);
    }
    t
}

/// Per-digit accuracy on the truncated train, truncated test, full train and
/// full test sets, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerDigitReport {
    pub columns: [(String, usize, AccuracyReport); 4],
}

pub fn per_digit_accuracy_report(
    net: &HybridNet,
    sets: [&LabeledDataset; 4],
    progress: Progress,
) -> Result<PerDigitReport> {
    let names = ["train_truncated", "test_truncated", "train_full", "test_full"];
    let mut out: Vec<(String, usize, AccuracyReport)> = Vec::with_capacity(4);
    for (name, ds) in names.iter().zip(sets) {
        let report = evaluate(net, ds)?;
        progress(&format!(
            "{name} ({} images): {:.2}%",
            ds.len(),
            report.average_percent()
        ));
        out.push((name.to_string(), ds.len(), report));
    }
    let columns: [(String, usize, AccuracyReport); 4] = out
        .try_into()
        .unwrap_or_else(|_| unreachable!("four sets give four columns"));
    Ok(PerDigitReport { columns })
}

impl PerDigitReport {
    pub fn to_csv(&self, config_hash: &str) -> CsvTable {
        let header: Vec<String> = std::iter::once("digit".to_string())
            .chain(self.columns.iter().map(|(n, size, _)| format!("{n}_{size}_pct")))
            .collect();
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(config_hash, &refs);
        let per: Vec<[f64; N_CLASSES]> = self.columns.iter().map(|c| c.2.per_digit_percent()).collect();
        for digit in 0..N_CLASSES {
            let mut row = vec![digit.to_string()];
            row.extend(per.iter().map(|p| pct(p[digit])));
            t.push(row);
        }
        let mut avg = vec!["average".to_string()];
        avg.extend(self.columns.iter().map(|c| pct(c.2.average_percent())));
        t.push(avg);
        t
    }

    /// Bar data: per-digit accuracy on the full test column.
    pub fn test_bars_csv(&self, config_hash: &str) -> CsvTable {
        let (_, size, report) = &self.columns[3];
        let mut t = CsvTable::new(config_hash, &["digit", "test_accuracy_pct"])
            .comment(format!("test_images={size}"));
        for (digit, v) in report.per_digit_percent().iter().enumerate() {
            t.push(vec![digit.to_string(), pct(*v)]);
        }
        t
    }
}

/// Sizes the global worker pool. Only the first call has an effect.
pub fn configure_jobs(jobs: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global();
}

fn stage<T>(
    name: &'static str,
    timings: &mut Vec<(String, f64)>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })?;
    timings.push((name.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

/// Baseline training, embedding table, γ sweep, phase portrait, hybrid
/// training and per-digit report, then the manifest. Stops at the first
/// failing stage.
pub fn run_all(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentManifest> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut timings = Vec::new();
    let (data, inputs) = stage("load-data", &mut timings, || {
        Ok((dataset::load_mnist(&cfg.data_dir)?, hash_inputs(&cfg.data_dir)?))
    })?;
    let mut out = stage("prepare-output", &mut timings, || {
        ArtifactDir::create(&cfg.out_dir)
    })?;

    let baseline = stage("train-baseline", &mut timings, || {
        let (net, history) = train_baseline_stage(cfg, &data, progress)?;
        net.save_weights(&out.path(BASELINE_WEIGHTS))?;
        out.register(BASELINE_WEIGHTS)?;
        out.write_csv(BASELINE_HISTORY, &baseline_history_csv(&history, &hash))?;
        Ok(net)
    })?;

    let (eval_train, eval_test) = evaluation_slices(cfg, &data)?;
    let mut cache = BTreeMap::new();
    stage("table1", &mut timings, || {
        let cols = reproduce_table1(&baseline, &eval_train, &eval_test, cfg, &mut cache, progress)?;
        out.write_csv(
            TABLE1,
            &table1_csv(&cols, eval_train.len(), eval_test.len(), &hash),
        )?;
        Ok(())
    })?;
    stage("gamma-sweep", &mut timings, || {
        let rows = sweep_gammas(&baseline, &eval_test, cfg, &cfg.gammas, &mut cache, progress)?;
        out.write_csv(GAMMA_SWEEP, &sweep_csv(&rows, eval_test.len(), &hash))?;
        Ok(())
    })?;
    stage("phase-portrait", &mut timings, || {
        let (null, traj) = phase_portrait(cfg, &PortraitSpec::default())?;
        out.write_csv(NULLCLINES, &null)?;
        out.write_csv(TRAJECTORY, &traj)?;
        Ok(())
    })?;

    let (h_train, h_test) = hybrid_sets(cfg, &data)?;
    let net = stage("train-hybrid", &mut timings, || {
        let (net, history) = train_hybrid_stage(cfg, &h_train, &h_test, Some(&baseline), progress)?;
        net.save(&out.path(HYBRID_WEIGHTS))?;
        out.register(HYBRID_WEIGHTS)?;
        out.write_csv(HYBRID_HISTORY, &hybrid_history_csv(&history, &hash))?;
        Ok(net)
    })?;
    stage("report", &mut timings, || {
        let (full_train, full_test) = report_full_sets(cfg, &data)?;
        let report = per_digit_accuracy_report(&net, [&h_train, &h_test, &full_train, &full_test], progress)?;
        out.write_csv(TABLE2, &report.to_csv(&hash))?;
        out.write_csv(PER_DIGIT_BARS, &report.test_bars_csv(&hash))?;
        Ok(())
    })?;

    let manifest = ExperimentManifest {
        config: cfg.clone(),
        artifacts: out.artifacts().clone(),
        inputs,
        timings,
    };
    let path = out.path(MANIFEST);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    progress(&format!("manifest written to {}", path.display()));
    Ok(manifest)
}
