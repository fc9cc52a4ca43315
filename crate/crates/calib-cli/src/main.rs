//! `calib`: measure calibration, size validation sets, target miscalibrated
//! bins, drive synthetic-text generation, and fit post-hoc calibrators.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad data, unsatisfiable
//! parameters, I/O), 2 on usage errors (clap's default). Output files are
//! written atomically (temp file + rename), so a failing invocation never
//! leaves a partial artifact behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use calib_core::bounds;
use calib_core::calibrate::{self, Calibrator};
use calib_core::metrics::infer_positive_label;
use calib_core::record::{read_records_path, write_records_jsonl, PredictionRecord};
use calib_core::targeting::{
    assemble, build_generation_specs, specs_from_json, specs_to_json, AlphaMode, AssemblyMode,
    TrainingItem,
};
use calib_core::toy::{self, ExperimentConfig, ToyModel};
use calib_core::{bin_records, BinningConfig, DiagramMode};
use calib_llm::{run_pipeline, to_training_items, BackendConfig, MismatchPolicy, SyntheticText, TaskSpec};

#[derive(Parser)]
#[command(name = "calib", version, about = "Calibration toolkit for binary classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the expected calibration error of a predictions file
    Ece(BinArgs),
    /// Emit the full reliability diagram (JSON, or CSV by extension)
    Diagram {
        #[command(flatten)]
        bin: BinArgs,
        /// Output file; stdout (JSON) when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hoeffding-style sample-size and uncertainty bounds
    Bound {
        #[command(subcommand)]
        command: BoundCommand,
    },
    /// Turn miscalibrated bins into generation specs
    Target(TargetArgs),
    /// Generate and relabel synthetic texts for a spec file
    Generate(GenerateArgs),
    /// Combine original training data with synthetic texts
    Assemble(AssembleArgs),
    /// Fit or apply a post-hoc calibrator
    Calibrate {
        #[command(subcommand)]
        command: CalibrateCommand,
    },
    /// 1-D logistic simulation of the targeting loop
    Toy {
        #[command(subcommand)]
        command: ToyCommand,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Bin by positive-class score; per-bin accuracy is the positive fraction
    Score,
    /// Bin by max(score, 1 - score); per-bin accuracy is the correct fraction
    Maxprob,
}

impl From<ModeArg> for DiagramMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Score => DiagramMode::Score,
            ModeArg::Maxprob => DiagramMode::MaxProb,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AssemblyArg {
    /// Replace targeted originals with the synthetic texts
    Synthesis,
    /// Keep all originals and append the synthetic texts
    SynthesisPlus,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Isotonic,
    Platt,
    Temperature,
}

#[derive(Args)]
struct BinArgs {
    /// Predictions file (.jsonl or .csv) with id, score, true_label
    input: PathBuf,
    /// Number of equal-width bins
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Binning axis
    #[arg(long, value_enum, default_value_t = ModeArg::Score)]
    mode: ModeArg,
    /// Positive class label; inferred from the data when omitted
    #[arg(long)]
    positive: Option<String>,
}

#[derive(Subcommand)]
enum BoundCommand {
    /// Smallest n meeting an (epsilon, delta) accuracy target; with --gap,
    /// the ECE variant (failure probability doubles, the gap eats tolerance)
    MinN {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        /// Confidence gap; switches to the ECE sample-size bound
        #[arg(long)]
        gap: Option<f64>,
    },
    /// ECE guarantee implied by an accuracy bound at sample size n
    Ece {
        #[arg(long)]
        epsilon_a: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        gap: f64,
    },
    /// Monte Carlo check that Bernoulli(p) means violate the tolerance no
    /// more often than 2 exp(-2 epsilon^2 n)
    Simulate {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TargetArgs {
    /// Predictions file (.jsonl or .csv); targeting uses score mode
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Absolute reliability-gap threshold for targeting a bin
    #[arg(long, default_value_t = 0.03)]
    threshold: f64,
    /// Fixed probability shift; defaults to each bin's own |gap|
    #[arg(long)]
    alpha: Option<f64>,
    /// Positive class label; inferred from the data when omitted
    #[arg(long)]
    positive: Option<String>,
    /// Output spec file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation specs produced by `calib target`
    #[arg(long)]
    specs: PathBuf,
    /// Task file: two classes with definitions and three shots each
    #[arg(long)]
    task: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    backend: BackendArg,
    /// Chat-completions endpoint, required for the http backend
    #[arg(long, required_if_eq("backend", "http"))]
    endpoint: Option<String>,
    /// Model name sent to the endpoint
    #[arg(long, default_value = "llama-2-7b-chat-hf")]
    model: String,
    /// Sampling temperature
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    /// Utterances requested per prompt
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Keep texts whose relabel contradicts the spec instead of dropping them
    #[arg(long)]
    keep_mismatched: bool,
    /// Output synthetic-texts file (JSON Lines); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssembleArgs {
    /// Original training items (.jsonl rows of {id, text, label})
    #[arg(long)]
    train: PathBuf,
    /// Generation specs from `calib target`
    #[arg(long)]
    specs: PathBuf,
    /// Synthetic texts from `calib generate`
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, value_enum, default_value_t = AssemblyArg::Synthesis)]
    assembly: AssemblyArg,
    /// Fail unless each spec received exactly sample_count texts
    #[arg(long)]
    strict: bool,
    /// Output training file (JSON Lines); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CalibrateCommand {
    /// Fit a calibrator on scored, labelled predictions
    Fit {
        /// Predictions file the calibrator is fitted on
        #[arg(long)]
        fit_on: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Positive class label; inferred from the data when omitted
        #[arg(long)]
        positive: Option<String>,
        /// Output calibrator file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite prediction scores through a fitted calibrator
    Apply {
        /// Calibrator file from `calib calibrate fit`
        calibrator: PathBuf,
        /// Predictions file to recalibrate
        input: PathBuf,
        /// Output predictions file (JSON Lines); stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Simulate, fit, inject truncated-normal points per targeted bin, refit
    Run {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of simulated points
        #[arg(long, default_value_t = 300)]
        n: usize,
        /// True intercept of the generating model
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        beta0: f64,
        /// True slope of the generating model
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        beta1: f64,
        /// Lower end of the uniform x range
        #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
        lo: f64,
        /// Upper end of the uniform x range
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        hi: f64,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        /// Absolute reliability-gap threshold for injecting into a bin
        #[arg(long, default_value_t = 0.03)]
        threshold: f64,
        /// L2 penalty for the staged fits; the default underfits on purpose
        /// so the starting model is miscalibrated, 0 gives plain MLE
        #[arg(long, default_value_t = 10.0)]
        ridge: f64,
        /// Staged report file (JSON); stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final fitted curve as x,p CSV
        #[arg(long)]
        curve_out: Option<PathBuf>,
        /// Directory receiving one reliability diagram JSON per stage
        #[arg(long)]
        diagrams_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ece(args) => {
            let diagram = diagram_for(&args)?;
            println!("{}", diagram.ece);
            Ok(())
        }
        Command::Diagram { bin, out } => {
            let diagram = diagram_for(&bin)?;
            let csv = matches!(out.as_deref().and_then(extension), Some("csv"));
            let text = if csv { diagram.to_csv() } else { diagram.to_json_pretty() };
            emit(out.as_deref(), &text)
        }
        Command::Bound { command } => run_bound(command),
        Command::Target(args) => run_target(&args),
        Command::Generate(args) => run_generate(&args),
        Command::Assemble(args) => run_assemble(&args),
        Command::Calibrate { command } => run_calibrate(command),
        Command::Toy {
            command:
                ToyCommand::Run {
                    seed, n, beta0, beta1, lo, hi, bins, threshold, ridge, out, curve_out, diagrams_out,
                },
        } => run_toy(
            ExperimentConfig {
                n,
                range: (lo, hi),
                beta_true: (beta0, beta1),
                num_bins: bins,
                threshold,
                ridge,
                seed,
            },
            out.as_deref(),
            curve_out.as_deref(),
            diagrams_out.as_deref(),
        ),
    }
}

fn diagram_for(args: &BinArgs) -> Result<calib_core::ReliabilityDiagram> {
    let records = load_records(&args.input)?;
    let mut config = BinningConfig::new(args.bins, args.mode.into())?;
    if let Some(label) = &args.positive {
        config = config.with_positive_label(label);
    }
    Ok(bin_records(&records, &config)?)
}

fn run_bound(command: BoundCommand) -> Result<()> {
    match command {
        BoundCommand::MinN { epsilon, delta, gap } => {
            let n = match gap {
                None => bounds::min_sample_size(epsilon, delta)?,
                Some(gap) => bounds::ece_min_sample_size(epsilon, delta, gap)?,
            };
            println!("{n}");
        }
        BoundCommand::Ece { epsilon_a, n, gap } => {
            let report = bounds::ece_bound(epsilon_a, n, gap)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        BoundCommand::Simulate { p, n, epsilon, trials, seed } => {
            let observed = bounds::simulate_hoeffding(p, n, epsilon, trials, seed)?;
            let bound = bounds::accuracy_uncertainty(epsilon, n)?;
            let report = serde_json::json!({
                "p": p,
                "n": n,
                "epsilon": epsilon,
                "trials": trials,
                "seed": seed,
                "observed_rate": observed,
                "bound": bound,
                "holds": observed <= bound,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn run_target(args: &TargetArgs) -> Result<()> {
    let records = load_records(&args.input)?;
    let mut config = BinningConfig::new(args.bins, DiagramMode::Score)?;
    if let Some(label) = &args.positive {
        config = config.with_positive_label(label);
    }
    let diagram = bin_records(&records, &config)?;
    let alpha_mode = match args.alpha {
        Some(alpha) => AlphaMode::Fixed(alpha),
        None => AlphaMode::GapMagnitude,
    };
    let specs = build_generation_specs(&diagram, &records, args.threshold, alpha_mode)?;
    emit(args.out.as_deref(), &specs_to_json(&specs))
}

fn run_generate(args: &GenerateArgs) -> Result<()> {
    let specs = specs_from_json(&read_file(&args.specs)?)?;
    let task = TaskSpec::load(&args.task)?;
    let mut backend = match args.backend {
        BackendArg::Mock => BackendConfig::mock(),
        BackendArg::Http => BackendConfig::http(
            args.endpoint.clone().expect("clap enforces --endpoint for http"),
            String::new(),
        ),
    };
    backend.model = args.model.clone();
    backend.temperature = args.temperature;
    backend.validate()?;
    let policy = if args.keep_mismatched { MismatchPolicy::Keep } else { MismatchPolicy::Strict };
    let texts = run_pipeline(&specs, &task, &backend, args.k, policy)?;
    let mut buf = Vec::new();
    calib_llm::write_synthetic_jsonl(&texts, &mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8(buf).expect("jsonl is utf-8"))
}

fn run_assemble(args: &AssembleArgs) -> Result<()> {
    let original = read_jsonl::<TrainingItem>(&args.train)?;
    let specs = specs_from_json(&read_file(&args.specs)?)?;
    let texts = read_jsonl::<SyntheticText>(&args.synthetic)?;
    for text in &texts {
        if text.relabeled_class.is_none() {
            bail!(
                "{}: text for spec {} has no relabeled_class",
                args.synthetic.display(),
                text.spec_id
            );
        }
    }
    let groups: Vec<Vec<TrainingItem>> = specs
        .iter()
        .map(|spec| {
            let id = calib_llm::spec_id(spec);
            let group: Vec<SyntheticText> =
                texts.iter().filter(|t| t.spec_id == id).cloned().collect();
            to_training_items(&group)
        })
        .collect();
    let grouped: usize = groups.iter().map(Vec::len).sum();
    if grouped != texts.len() {
        bail!(
            "{} of {} synthetic texts reference bins absent from the spec file",
            texts.len() - grouped,
            texts.len()
        );
    }
    let mode = match args.assembly {
        AssemblyArg::Synthesis => AssemblyMode::Synthesis,
        AssemblyArg::SynthesisPlus => AssemblyMode::SynthesisPlus,
    };
    let combined = assemble(&original, &groups, &specs, mode, args.strict)?;
    let mut text = String::new();
    for item in &combined {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)
}

fn run_calibrate(command: CalibrateCommand) -> Result<()> {
    match command {
        CalibrateCommand::Fit { fit_on, method, positive, out } => {
            let records = load_records(&fit_on)?;
            let positive = match positive {
                Some(label) => label,
                None => infer_positive_label(&records)?,
            };
            let pairs: Vec<(f64, f64)> = records
                .iter()
                .map(|r| (r.score, f64::from(r.true_label == positive)))
                .collect();
            let calibrator = match method {
                MethodArg::Isotonic => Calibrator::Isotonic(calibrate::fit_isotonic(&pairs)?),
                MethodArg::Platt => Calibrator::Platt(calibrate::fit_platt(&pairs)?),
                MethodArg::Temperature => {
                    Calibrator::Temperature(calibrate::fit_temperature(&pairs)?)
                }
            };
            emit(out.as_deref(), &calibrator.to_json())
        }
        CalibrateCommand::Apply { calibrator, input, out } => {
            let calibrator = Calibrator::from_json(&read_file(&calibrator)?)?;
            let mut records = load_records(&input)?;
            for record in &mut records {
                record.score = calibrator.apply(record.score);
            }
            emit(out.as_deref(), &write_records_jsonl(&records))
        }
    }
}

fn run_toy(
    config: ExperimentConfig,
    out: Option<&Path>,
    curve_out: Option<&Path>,
    diagrams_out: Option<&Path>,
) -> Result<()> {
    let report = toy::run_experiment(&config)?;

    // build every artifact before writing any, so failures leave nothing behind
    let curve = match curve_out {
        Some(_) => {
            let last = report.final_stage();
            let model =
                ToyModel { beta0: last.beta0, beta1: last.beta1, converged: true, iterations: 0 };
            Some(toy::curve_csv(&model, config.range.0, config.range.1, 201)?)
        }
        None => None,
    };
    let diagrams: Vec<(String, String)> = report
        .stages
        .iter()
        .enumerate()
        .filter_map(|(i, stage)| {
            stage.diagram.as_ref().map(|d| (format!("stage{i}.json"), d.to_json_pretty()))
        })
        .collect();

    emit(out, &report.to_json())?;
    if let (Some(path), Some(curve)) = (curve_out, curve) {
        write_atomic(path, &ensure_newline(curve))?;
    }
    if let Some(dir) = diagrams_out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating directory {}", dir.display()))?;
        for (name, json) in diagrams {
            write_atomic(&dir.join(name), &ensure_newline(json))?;
        }
    }
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_records_path(path).with_context(|| format!("reading {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for (i, line) in read_file(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}: bad row", path.display(), i + 1))?,
        );
    }
    Ok(rows)
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn ensure_newline(mut text: String) -> String {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

/// Print to stdout, or write the file atomically so interrupted or failing
/// runs never leave partial output.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    let text = ensure_newline(text.to_string());
    match out {
        Some(path) => write_atomic(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("moving output into place at {}", path.display()))?;
    Ok(())
}
