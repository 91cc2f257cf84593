//! Command-line driver: dataset generation, training, evaluation,
//! single-window prediction, ablation grids, and figure rendering.
//!
//! Exit codes: 0 success, 1 usage, 2 data or configuration error,
//! 3 numerical failure during training.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scenecast::ablate::{evaluate_model, run_ablation, AblationGrid, AggregateMetrics};
use scenecast::config::ForecastConfig;
use scenecast::error::Error;
use scenecast::eval::HorizonMetrics;
use scenecast::io::checkpoint::load_checkpoint;
use scenecast::io::config_file::{parse_kv, parse_kv_file};
use scenecast::io::formats::{load_dataset, read_sequence, write_motion, Sequence};
use scenecast::io::synth::{generate_dataset, SynthSpec};
use scenecast::stages::full_pipeline;
use scenecast::train::{train, TrainingConfig};
use scenecast::types::ContactMap;

#[derive(Parser)]
#[command(
    name = "scenecast",
    about = "Contact-aware global human motion forecasting over 3D scenes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walking benchmark dataset.
    GenData {
        /// Generator settings as key=value lines; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset's train split; writes checkpoints and a loss log.
    Train {
        /// Model and training settings as key=value lines.
        #[arg(long)]
        config: PathBuf,
        /// Dataset root holding train/ and test/.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and loss.log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluation window stride in frames (default: training stride).
        #[arg(long)]
        stride: Option<usize>,
        /// Metrics file to write in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast one window of one sequence and write the outputs.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Sequence directory name, e.g. seq_000.
        #[arg(long)]
        sequence: String,
        /// First observed frame of the window.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Directory receiving contacts.txt, root.txt, and pose.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid; writes per-run results, results.csv, summary.txt.
    Ablate {
        /// Grid file: base key=value lines plus cell.<name>.<key> overrides.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent cell-seed runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render per-frame error curves and bird's-eye trajectory figures.
    Plot {
        /// Metrics file written by `eval`; renders frame_mae.svg.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Prediction directory written by `predict`; renders birdseye.svg
        /// (requires --data and --sequence).
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        sequence: Option<String>,
        /// First observed frame of the predicted window.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Directory receiving the figures.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

pub enum CliError {
    Usage(String),
    Core(Error),
    Render(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Render(msg)) => {
            eprintln!("plot error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { config, out } => gen_data(config.as_deref(), &out),
        Command::Train { config, data, out } => run_train(&config, &data, &out),
        Command::Eval {
            config,
            checkpoint,
            data,
            split,
            stride,
            out,
        } => run_eval(&config, &checkpoint, &data, &split, stride, out.as_deref()),
        Command::Predict {
            config,
            checkpoint,
            data,
            split,
            sequence,
            start,
            out,
        } => run_predict(&config, &checkpoint, &data, &split, &sequence, start, &out),
        Command::Ablate {
            grid,
            data,
            out,
            jobs,
        } => run_ablate(&grid, &data, &out, jobs),
        Command::Plot {
            metrics,
            prediction,
            data,
            split,
            sequence,
            start,
            out_dir,
        } => run_plot(
            metrics.as_deref(),
            prediction.as_deref(),
            data.as_deref(),
            &split,
            sequence.as_deref(),
            start,
            &out_dir,
        ),
    }
}

/// Parses one file holding both the forecast and the training keys.
fn load_model_setup(config: &Path) -> Result<(ForecastConfig, TrainingConfig), Error> {
    let mut kv = parse_kv_file(config)?;
    let fc = ForecastConfig::from_kv(&mut kv)?;
    let tc = TrainingConfig::from_kv(&mut kv, fc.seed)?;
    kv.finish()?;
    Ok((fc, tc))
}

fn gen_data(config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut kv = match config {
        Some(path) => parse_kv_file(path)?,
        None => parse_kv("", "defaults")?,
    };
    let train_n = kv.take_or("train_sequences", 32)?;
    let test_n = kv.take_or("test_sequences", 8)?;
    let spec = SynthSpec::from_kv(&mut kv)?;
    kv.finish()?;
    generate_dataset(&spec, train_n, test_n, out)?;
    println!(
        "wrote {train_n} train / {test_n} test sequences of {} frames to {}",
        spec.frames,
        out.display()
    );
    Ok(())
}

fn run_train(config: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let (fc, tc) = load_model_setup(config)?;
    let dataset = sequences(load_dataset(data, "train")?);
    fs::create_dir_all(out)?;
    let log_path = out.join("loss.log");
    // The trainer appends; start each invocation from a clean log.
    let _ = fs::remove_file(&log_path);
    let outcome = train(&fc, &tc, &dataset, None, Some(&log_path), Some(out))?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained phases [{}] on {} sequences; final {} loss {:.6}",
        outcome.phases.join(", "),
        dataset.len(),
        last.phase,
        last.loss
    );
    println!("checkpoints and loss.log in {}", out.display());
    Ok(())
}

fn run_eval(
    config: &Path,
    checkpoint: &Path,
    data: &Path,
    split: &str,
    stride: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (fc, tc) = load_model_setup(config)?;
    let spec = tc.model_spec(&fc);
    let params = load_checkpoint(checkpoint, &spec)?;
    let dataset = sequences(load_dataset(data, split)?);
    let agg = evaluate_model(
        &spec,
        &params,
        &dataset,
        tc.contact_source,
        stride.unwrap_or(tc.window_stride),
    )?;
    let text = render_metrics(&agg, fc.fps);
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text)?;
        println!("metrics written to {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_predict(
    config: &Path,
    checkpoint: &Path,
    data: &Path,
    split: &str,
    sequence: &str,
    start: usize,
    out: &Path,
) -> Result<(), CliError> {
    let (fc, tc) = load_model_setup(config)?;
    let spec = tc.model_spec(&fc);
    let params = load_checkpoint(checkpoint, &spec)?;
    let seq = read_sequence(&data.join(split).join(sequence))?;
    let window = seq.motion.window(start, fc.total_frames())?;
    let m_obs = window.window(0, fc.observed_frames)?;
    let output = full_pipeline(
        &spec,
        &params,
        &m_obs,
        &seq.scene,
        tc.contact_source,
        Some(&window),
    )?;

    fs::create_dir_all(out)?;
    write_contacts(&out.join("contacts.txt"), &output.contacts)?;
    let mut root_text = String::new();
    for row in output.root.positions().rows() {
        root_text.push_str(&format!("{} {} {}\n", row[0], row[1], row[2]));
    }
    fs::write(out.join("root.txt"), root_text)?;
    write_motion(&out.join("pose.txt"), &output.poses)?;
    println!(
        "predicted {} future frames from {}/{} starting at frame {start}",
        fc.future_frames,
        split,
        sequence
    );
    println!("contacts.txt, root.txt, pose.txt in {}", out.display());
    Ok(())
}

fn run_ablate(grid: &Path, data: &Path, out: &Path, jobs: usize) -> Result<(), CliError> {
    let grid = AblationGrid::from_kv(parse_kv_file(grid)?)?;
    let train_set = sequences(load_dataset(data, "train")?);
    let test_set = sequences(load_dataset(data, "test")?);
    let report = run_ablation(&grid, &train_set, &test_set, out, jobs)?;
    let failures = report
        .records
        .iter()
        .filter(|r| r.error.is_some())
        .count();
    println!(
        "{} runs ({} computed, {} reused from earlier invocations), {} failed",
        report.records.len(),
        report.executed,
        report.reused,
        failures
    );
    print!("{}", fs::read_to_string(&report.summary_path)?);
    println!("results table: {}", report.results_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_plot(
    metrics: Option<&Path>,
    prediction: Option<&Path>,
    data: Option<&Path>,
    split: &str,
    sequence: Option<&str>,
    start: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    if metrics.is_none() && prediction.is_none() {
        return Err(CliError::Usage(
            "plot needs --metrics and/or --prediction".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    if let Some(metrics) = metrics {
        let out = out_dir.join("frame_mae.svg");
        plot::frame_mae_curve(metrics, &out)?;
        println!("wrote {}", out.display());
    }
    if let Some(prediction) = prediction {
        let (Some(data), Some(sequence)) = (data, sequence) else {
            return Err(CliError::Usage(
                "--prediction requires --data and --sequence".into(),
            ));
        };
        let seq = read_sequence(&data.join(split).join(sequence))?;
        let out = out_dir.join("birdseye.svg");
        plot::birdseye(&seq, start, prediction, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn sequences(with_ids: Vec<(String, Sequence)>) -> Vec<Sequence> {
    with_ids.into_iter().map(|(_, seq)| seq).collect()
}

/// Key=value metrics dump; `frame_mae` is a comma-separated curve.
fn render_metrics(agg: &AggregateMetrics, fps: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!("windows={}\n", agg.windows));
    out.push_str(&format!("fps={fps}\n"));
    let horizons = |name: &str, m: &HorizonMetrics| {
        format!(
            "{name}_half={}\n{name}_one={}\n{name}_two={}\n{name}_full={}\n",
            m.half_second, m.one_second, m.two_seconds, m.full
        )
    };
    out.push_str(&horizons("path", &agg.path));
    out.push_str(&horizons("pose", &agg.pose));
    if let Some(c) = &agg.contact_rms {
        out.push_str(&horizons("contact", c));
    }
    let mae: Vec<String> = agg.frame_mae.iter().map(|v| format!("{v}")).collect();
    out.push_str(&format!("frame_mae={}\n", mae.join(",")));
    out
}

/// One line per frame; per joint: flag x y z.
fn write_contacts(path: &Path, contacts: &ContactMap) -> Result<(), Error> {
    let mut text = String::new();
    for t in 0..contacts.frame_count() {
        let mut fields = Vec::with_capacity(contacts.joint_count() * 4);
        for j in 0..contacts.joint_count() {
            let [x, y, z] = contacts.coordinate(t, j);
            fields.push(format!("{}", u8::from(contacts.flag(t, j))));
            fields.push(format!("{x}"));
            fields.push(format!("{y}"));
            fields.push(format!("{z}"));
        }
        text.push_str(&fields.join(" "));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
