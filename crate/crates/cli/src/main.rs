use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use fhn_hybrid::config::{parse_list, ExperimentConfig};
use fhn_hybrid::dataset::load_mnist;
use fhn_hybrid::experiments::{self as ex, ArtifactDir, PortraitSpec};
use fhn_hybrid::fhn::FhnState;
use fhn_hybrid::hybrid::{evaluate, HybridNet};
use fhn_hybrid::nn::DenseNet;
use fhn_hybrid::Error;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (weights FHNW0001, hybrid FHNH0001)");

#[derive(Parser, Debug)]
#[command(name = "fhnnet", version = VERSION, about = "MNIST classifiers with a FitzHugh–Nagumo hidden layer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for image-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Train without biases.
    #[arg(long, global = true)]
    no_bias: bool,
    /// Short control window and small truncated sets.
    #[arg(long, global = true)]
    fast: bool,
    /// Evaluate the embedding on the complete splits.
    #[arg(long, global = true)]
    full: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[arg(long = "a", global = true, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    t_transient: Option<f64>,
    #[arg(long, global = true)]
    t_control: Option<f64>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the 784-100-10 baseline and save its weights.
    TrainBaseline,
    /// Embed the baseline at one γ and evaluate it.
    EmbedEval {
        #[arg(long, allow_hyphen_values = true)]
        gamma: f64,
        /// Baseline weights (default: OUT_DIR/weights/baseline.fhnw).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Per-digit embedding accuracy for the configured three γ.
    Table1 {
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Embedding accuracy over a list of γ.
    GammaSweep {
        /// Comma-separated, e.g. `-2,-1.5,-1`.
        #[arg(long, allow_hyphen_values = true)]
        gammas: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Train the hybrid network with surrogate gradients.
    TrainHybrid {
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        /// Baseline weights for `hybrid_init = baseline`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Accuracy tables of a trained hybrid network.
    Report {
        /// Emit the four-column per-digit table.
        #[arg(long)]
        per_digit: bool,
        /// Hybrid weights (default: OUT_DIR/weights/hybrid.fhnh).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Nullcline and trajectory CSVs for one drive.
    PhasePortrait {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        drive: f64,
        #[arg(long, default_value_t = 50.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        y0: f64,
        /// Keep every n-th integration step.
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Every stage in order, plus the manifest.
    RunAll,
}

fn resolve(common: &Common) -> fhn_hybrid::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if common.fast {
        cfg.apply_fast_profile();
    }
    let mut flags: BTreeMap<&str, String> = BTreeMap::new();
    let mut put = |k, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k, v);
        }
    };
    put(
        "data_dir",
        common.data_dir.as_ref().map(|p| p.display().to_string()),
    );
    put(
        "out_dir",
        common.out_dir.as_ref().map(|p| p.display().to_string()),
    );
    put("seed", common.seed.map(|v| v.to_string()));
    put("jobs", common.jobs.map(|v| v.to_string()));
    put("epsilon", common.epsilon.map(|v| v.to_string()));
    put("a", common.a.map(|v| v.to_string()));
    put("dt", common.dt.map(|v| v.to_string()));
    put("t_transient", common.t_transient.map(|v| v.to_string()));
    put("t_control", common.t_control.map(|v| v.to_string()));
    put("learning_rate", common.learning_rate.map(|v| v.to_string()));
    put("batch_size", common.batch_size.map(|v| v.to_string()));
    put("epochs", common.epochs.map(|v| v.to_string()));
    if common.no_bias {
        flags.insert("use_bias", "false".into());
    }
    if common.full {
        flags.insert("full", "true".into());
    }
    for (k, v) in &flags {
        cfg.set(k, v)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Divergence { .. } => 3,
        Error::MissingData(_)
        | Error::Format { .. }
        | Error::Io { .. }
        | Error::Value(_)
        | Error::InsufficientClass { .. }
        | Error::Dimension(_) => 2,
        Error::Config(_) | Error::InvalidParameter(_) | Error::Stage { .. } => 1,
    }
}

fn load_baseline(path: Option<&PathBuf>, out: &ArtifactDir) -> fhn_hybrid::Result<DenseNet> {
    let path = path.cloned().unwrap_or_else(|| out.path(ex::BASELINE_WEIGHTS));
    if !path.is_file() {
        return Err(Error::MissingData(format!(
            "baseline weights {} not found (run `fhnnet train-baseline` or pass --weights)",
            path.display()
        )));
    }
    DenseNet::load_weights(&path)
}

fn run(cmd: &Command, cfg: &mut ExperimentConfig) -> fhn_hybrid::Result<()> {
    let mut progress = |line: &str| println!("{line}");
    let hash = cfg.hash();
    match cmd {
        Command::RunAll => {
            let manifest = ex::run_all(cfg, &mut progress)?;
            println!("artifacts: {}", manifest.artifacts.len());
            return Ok(());
        }
        Command::PhasePortrait {
            drive,
            duration,
            x0,
            y0,
            stride,
        } => {
            let spec = PortraitSpec {
                drive: *drive,
                initial: FhnState::new(*x0, *y0),
                duration: *duration,
                stride: *stride,
                ..PortraitSpec::default()
            };
            let (null, traj) = ex::phase_portrait(cfg, &spec)?;
            let mut out = ArtifactDir::create(&cfg.out_dir)?;
            println!("nullclines: {}", out.write_csv(ex::NULLCLINES, &null)?.display());
            println!("trajectory: {}", out.write_csv(ex::TRAJECTORY, &traj)?.display());
            return Ok(());
        }
        _ => {}
    }

    let data = load_mnist(&cfg.data_dir)?;
    let mut out = ArtifactDir::create(&cfg.out_dir)?;
    match cmd {
        Command::TrainBaseline => {
            let (net, history) = ex::train_baseline_stage(cfg, &data, &mut progress)?;
            let path = out.path(ex::BASELINE_WEIGHTS);
            net.save_weights(&path)?;
            let csv = out.write_csv(ex::BASELINE_HISTORY, &ex::baseline_history_csv(&history, &hash))?;
            if let Some(last) = history.last() {
                println!("test accuracy: {:.2}%", 100.0 * last.test_accuracy);
            }
            println!("weights: {}", path.display());
            println!("csv: {}", csv.display());
        }
        Command::EmbedEval { gamma, weights } => {
            let baseline = load_baseline(weights.as_ref(), &out)?;
            let (_, test) = ex::evaluation_slices(cfg, &data)?;
            let net = HybridNet::embed(&baseline, cfg.embed_config(*gamma)?)?;
            let report = evaluate(&net, &test)?;
            let mut table = ex::CsvTable::new(&hash, &["digit", "test_accuracy_pct"])
                .comment(format!("gamma={gamma} test_images={}", test.len()));
            for (d, v) in report.per_digit_percent().iter().enumerate() {
                table.push(vec![d.to_string(), ex::pct(*v)]);
            }
            table.push(vec!["average".into(), ex::pct(report.average_percent())]);
            let csv = out.write_csv(&format!("tables/embed_eval_gamma_{gamma}.csv"), &table)?;
            println!(
                "average accuracy: {:.2}% (gamma {gamma}, {} test images)",
                report.average_percent(),
                test.len()
            );
            println!("csv: {}", csv.display());
        }
        Command::Table1 { weights } => {
            let baseline = load_baseline(weights.as_ref(), &out)?;
            let (train, test) = ex::evaluation_slices(cfg, &data)?;
            let cols =
                ex::reproduce_table1(&baseline, &train, &test, cfg, &mut BTreeMap::new(), &mut progress)?;
            let csv = out.write_csv(ex::TABLE1, &ex::table1_csv(&cols, train.len(), test.len(), &hash))?;
            println!("csv: {}", csv.display());
        }
        Command::GammaSweep { gammas, weights } => {
            if let Some(list) = gammas {
                cfg.gammas = parse_list("gammas", list)?;
            }
            let baseline = load_baseline(weights.as_ref(), &out)?;
            let (_, test) = ex::evaluation_slices(cfg, &data)?;
            let rows = ex::sweep_gammas(
                &baseline,
                &test,
                cfg,
                &cfg.gammas,
                &mut BTreeMap::new(),
                &mut progress,
            )?;
            let csv = out.write_csv(ex::GAMMA_SWEEP, &ex::sweep_csv(&rows, test.len(), &cfg.hash()))?;
            println!("csv: {}", csv.display());
        }
        Command::TrainHybrid { gamma, weights } => {
            if let Some(g) = gamma {
                cfg.gamma = *g;
            }
            let baseline = match cfg.hybrid_init {
                fhn_hybrid::config::InitKind::Baseline => Some(load_baseline(weights.as_ref(), &out)?),
                fhn_hybrid::config::InitKind::Fresh => None,
            };
            let (train, test) = ex::hybrid_sets(cfg, &data)?;
            let (net, history) =
                ex::train_hybrid_stage(cfg, &train, &test, baseline.as_ref(), &mut progress)?;
            let path = out.path(ex::HYBRID_WEIGHTS);
            net.save(&path)?;
            let csv = out.write_csv(ex::HYBRID_HISTORY, &ex::hybrid_history_csv(&history, &cfg.hash()))?;
            if let Some(last) = history.last() {
                println!("test accuracy: {:.2}% (class-averaged)", last.test_accuracy);
            }
            println!("weights: {}", path.display());
            println!("csv: {}", csv.display());
        }
        Command::Report { per_digit, weights } => {
            let path = weights.clone().unwrap_or_else(|| out.path(ex::HYBRID_WEIGHTS));
            if !path.is_file() {
                return Err(Error::MissingData(format!(
                    "hybrid weights {} not found (run `fhnnet train-hybrid` or pass --weights)",
                    path.display()
                )));
            }
            let net = HybridNet::load(&path, cfg.hybrid_config()?)?;
            let (train, test) = ex::hybrid_sets(cfg, &data)?;
            if *per_digit {
                let (full_train, full_test) = ex::report_full_sets(cfg, &data)?;
                let report = ex::per_digit_accuracy_report(
                    &net,
                    [&train, &test, &full_train, &full_test],
                    &mut progress,
                )?;
                let t2 = out.write_csv(ex::TABLE2, &report.to_csv(&hash))?;
                let bars = out.write_csv(ex::PER_DIGIT_BARS, &report.test_bars_csv(&hash))?;
                println!("csv: {}", t2.display());
                println!("csv: {}", bars.display());
            } else {
                let report = evaluate(&net, &test)?;
                println!(
                    "average accuracy: {:.2}% ({} test images)",
                    report.average_percent(),
                    test.len()
                );
            }
        }
        Command::RunAll | Command::PhasePortrait { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let mut cfg = match resolve(&cli.common).and_then(|c| c.validate().map(|_| c)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    ex::configure_jobs(cfg.jobs);
    println!("# resolved config (hash {})", cfg.hash());
    for line in cfg.to_text().lines() {
        println!("#   {line}");
    }
    match run(&cli.command, &mut cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
