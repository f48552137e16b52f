//! Command-line front end for the simulated MEA reservoir workbench.
//!
//! `simulate` produces session directories, `report` (or the narrower
//! `sweep-window`, `cross-day`, `ar-baseline`) turns them into CSV/SVG
//! reports, and the remaining commands expose the single pipeline stages
//! (detection, scheduling, feature extraction, training, evaluation).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mea_reservoir_core::config::ExperimentConfig;
use mea_reservoir_core::detect::{detect_spikes, write_spikes_csv, write_spikes_csv_file};
use mea_reservoir_core::harness::{
    ar_per_digit, cross_day_csv, cross_day_experiment, cross_day_svg, features_at_window,
    load_run, load_session, run_session, session_name, sweep_csv, window_sweep, write_reports,
    CrossDayRow, WindowSweepRow,
};
use mea_reservoir_core::readout::{write_features_csv, write_features_csv_file, ChannelMask};
use mea_reservoir_core::readout::read_features_csv_file;
use mea_reservoir_core::seed::derive_seed;
use mea_reservoir_core::signal::read_mear_file;
use mea_reservoir_core::slp::{
    evaluate, read_model_file, train_slp, write_model_file, Hyperparams, NUM_CLASSES,
};
use mea_reservoir_core::stim::{
    build_all_patterns, build_schedule, write_schedule_csv, write_schedule_csv_file,
};

#[derive(Parser)]
#[command(name = "mea-reservoir", version, about = "Simulated MEA reservoir-computing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpts {
    /// Experiment config TOML; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load_file(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunDirArgs {
    /// Run directory produced by `simulate`.
    run_dir: PathBuf,
    /// Where to write the report files (default: `<run_dir>/reports`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs stimulation sessions into a run directory (the whole
    /// replicate-by-day grid unless --replicate/--day narrow it down).
    Simulate {
        #[command(flatten)]
        config: ConfigOpts,
        /// Run directory to create or extend.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Only this replicate (1-based).
        #[arg(long, value_name = "R")]
        replicate: Option<usize>,
        /// Only this day (1-based).
        #[arg(long, value_name = "D")]
        day: Option<usize>,
    },
    /// Detects spikes in a raw `.mear` recording and writes a spike CSV.
    Detect {
        #[command(flatten)]
        config: ConfigOpts,
        /// Raw recording to scan.
        recording: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Draws the randomized trial schedule of one session as CSV.
    Schedule {
        #[command(flatten)]
        config: ConfigOpts,
        #[arg(long, value_name = "R", default_value_t = 1)]
        replicate: usize,
        #[arg(long, value_name = "D", default_value_t = 1)]
        day: usize,
        /// Output CSV (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Recounts a stored session's features at a readout window.
    Extract {
        /// Run directory holding the session.
        run_dir: PathBuf,
        #[arg(long, value_name = "R", default_value_t = 1)]
        replicate: usize,
        #[arg(long, value_name = "D", default_value_t = 1)]
        day: usize,
        /// Readout window in milliseconds (config default when omitted).
        #[arg(long, value_name = "MS")]
        window_ms: Option<f64>,
        /// Output CSV (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Trains the softmax classifier on a feature CSV and saves the model.
    Train {
        #[command(flatten)]
        config: ConfigOpts,
        /// Feature CSV (as written by `simulate` or `extract`).
        features: PathBuf,
        /// Model file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Evaluates a saved model on a feature CSV.
    Eval {
        #[command(flatten)]
        config: ConfigOpts,
        /// Model file written by `train`.
        model: PathBuf,
        /// Feature CSV to score.
        features: PathBuf,
    },
    /// Readout-window sweep over the sessions of a run directory.
    SweepWindow(RunDirArgs),
    /// Cross-day transfer table for a run directory.
    CrossDay(RunDirArgs),
    /// Artificial-reservoir baseline row for a run directory.
    ArBaseline(RunDirArgs),
    /// Regenerates every report of a run directory.
    Report(RunDirArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            out,
            replicate,
            day,
        } => simulate(&config.load()?, &out, replicate, day),
        Command::Detect {
            config,
            recording,
            out,
        } => detect(&config.load()?, &recording, out.as_deref()),
        Command::Schedule {
            config,
            replicate,
            day,
            out,
        } => schedule(&config.load()?, replicate, day, out.as_deref()),
        Command::Extract {
            run_dir,
            replicate,
            day,
            window_ms,
            out,
        } => extract(&run_dir, replicate, day, window_ms, out.as_deref()),
        Command::Train {
            config,
            features,
            out,
        } => train(&config.load()?, &features, &out),
        Command::Eval {
            config,
            model,
            features,
        } => eval_model(&config.load()?, &model, &features),
        Command::SweepWindow(args) => sweep_window_cmd(&args),
        Command::CrossDay(args) => cross_day_cmd(&args),
        Command::ArBaseline(args) => ar_baseline_cmd(&args),
        Command::Report(args) => report_cmd(&args),
    }
}

/// Writes `config.toml` and `manifest.toml` into a new run directory, or
/// verifies that an existing one was produced by the same config.
fn ensure_run_provenance(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config_path = dir.join("config.toml");
    let hash = config.config_hash()?;
    if config_path.exists() {
        let stored = ExperimentConfig::load_file(&config_path)?;
        if stored.config_hash()? != hash {
            bail!(
                "run directory {} belongs to a different config",
                dir.display()
            );
        }
        return Ok(());
    }
    config.save_file(&config_path)?;
    let manifest = format!(
        "tool = \"mea-reservoir\"\nversion = \"{}\"\nconfig_hash = \"{hash}\"\nmaster_seed = {}\n",
        env!("CARGO_PKG_VERSION"),
        config.master_seed
    );
    fs::write(dir.join("manifest.toml"), manifest)?;
    Ok(())
}

fn simulate(
    config: &ExperimentConfig,
    out: &Path,
    replicate: Option<usize>,
    day: Option<usize>,
) -> Result<()> {
    ensure_run_provenance(out, config)?;
    let replicates: Vec<usize> = match replicate {
        Some(r) => vec![r],
        None => (1..=config.replicates).collect(),
    };
    let days: Vec<usize> = match day {
        Some(d) => vec![d],
        None => (1..=config.days).collect(),
    };
    for &r in &replicates {
        for &d in &days {
            let session = run_session(config, r, d, Some(out))?;
            let spikes: usize = session
                .spike_trains
                .iter()
                .map(|t| t.total_spikes())
                .sum();
            println!(
                "{}: {} trials, {} evoked spikes, spontaneous {:.2} Hz/channel, model {}",
                session.name,
                session.schedule.len(),
                spikes,
                session.spontaneous.mean_rate_hz(),
                &session.model_hash[..12]
            );
        }
    }
    Ok(())
}

fn detect(config: &ExperimentConfig, recording: &Path, out: Option<&Path>) -> Result<()> {
    let (rec, _) = read_mear_file(recording)
        .with_context(|| format!("reading {}", recording.display()))?;
    let train = detect_spikes(&rec, &config.detector)?;
    match out {
        Some(path) => {
            write_spikes_csv_file(path, &train)?;
            println!(
                "{} spikes on {} channels ({:.2} Hz/channel) -> {}",
                train.total_spikes(),
                train.n_channels(),
                train.mean_rate_hz(),
                path.display()
            );
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_spikes_csv(&mut stdout, &train)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn schedule(
    config: &ExperimentConfig,
    replicate: usize,
    day: usize,
    out: Option<&Path>,
) -> Result<()> {
    let patterns = build_all_patterns(&config.glyph, &config.pulse)?;
    let seed = derive_seed(
        config.master_seed,
        "schedule",
        &[replicate as u64, day as u64],
    );
    let sched = build_schedule(
        &patterns,
        config.schedule.repetitions,
        config.schedule.inter_stimulus_s,
        seed,
    )?;
    match out {
        Some(path) => {
            write_schedule_csv_file(path, &sched)?;
            println!(
                "{} trials over {:.1} s -> {}",
                sched.len(),
                sched.duration_s(),
                path.display()
            );
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_schedule_csv(&mut stdout, &sched)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn extract(
    run_dir: &Path,
    replicate: usize,
    day: usize,
    window_ms: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let config = ExperimentConfig::load_file(&run_dir.join("config.toml"))?;
    let session = load_session(&run_dir.join(session_name(replicate, day)), &config)?;
    let window_s = match window_ms {
        Some(ms) => ms / 1000.0,
        None => config.readout.window_s,
    };
    let features = features_at_window(&session, &config, window_s)?;
    match out {
        Some(path) => {
            write_features_csv_file(path, &features)?;
            println!(
                "{} feature rows at {} ms -> {}",
                features.len(),
                window_s * 1000.0,
                path.display()
            );
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_features_csv(&mut stdout, &features)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn train(config: &ExperimentConfig, features_path: &Path, out: &Path) -> Result<()> {
    let features = read_features_csv_file(features_path, config.readout.window_s, |_| {
        ChannelMask::none()
    })?;
    let model = train_slp(&features, &config.classifier)?;
    let (train_acc, _) = evaluate(&model, &features)?;
    write_model_file(&model, out)?;
    println!(
        "trained on {} rows, training accuracy {:.1}% -> {}",
        features.len(),
        100.0 * train_acc,
        out.display()
    );
    Ok(())
}

fn eval_model(config: &ExperimentConfig, model_path: &Path, features_path: &Path) -> Result<()> {
    let model = read_model_file(model_path)?;
    let features = read_features_csv_file(features_path, config.readout.window_s, |_| {
        ChannelMask::none()
    })?;
    let (acc, confusion) = evaluate(&model, &features)?;
    println!("accuracy {:.1}% on {} rows", 100.0 * acc, features.len());
    for (c, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total > 0 {
            println!("  digit {c}: {:.1}% of {total}", 100.0 * row[c] as f64 / total as f64);
        }
    }
    Ok(())
}

fn reports_dir(args: &RunDirArgs) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| args.run_dir.join("reports"))
}

fn print_sweep(rows: &[WindowSweepRow]) {
    for row in rows {
        println!(
            "  {:>5.1} ms: {:.1}% +/- {:.1}%",
            row.window_ms,
            100.0 * row.mean_accuracy,
            100.0 * row.sem_accuracy
        );
    }
}

fn print_cross_day(rows: &[CrossDayRow]) {
    for row in rows {
        println!(
            "  day {}: {:.1}% +/- {:.1}% (shuffled {:.1}%)",
            row.day,
            100.0 * row.mean_accuracy,
            100.0 * row.sd_accuracy,
            100.0 * row.shuffled_mean
        );
    }
}

fn sweep_window_cmd(args: &RunDirArgs) -> Result<()> {
    let (config, sessions) = load_run(&args.run_dir)?;
    let hp = Hyperparams {
        epochs: config.sweep_epochs,
        ..config.classifier.clone()
    };
    let rows = window_sweep(
        &sessions,
        &config,
        &hp,
        derive_seed(config.master_seed, "report-sweep", &[]),
    )?;
    let out = reports_dir(args);
    fs::create_dir_all(&out)?;
    let names: Vec<String> = sessions.iter().map(|s| s.name.clone()).collect();
    fs::write(out.join("window_sweep.csv"), sweep_csv(&rows, &names)?)?;
    println!("window sweep over {} sessions:", sessions.len());
    print_sweep(&rows);
    Ok(())
}

fn cross_day_cmd(args: &RunDirArgs) -> Result<()> {
    let (config, sessions) = load_run(&args.run_dir)?;
    let rows = cross_day_experiment(
        &sessions,
        &config,
        derive_seed(config.master_seed, "report-cross-day", &[]),
    )?;
    let out = reports_dir(args);
    fs::create_dir_all(&out)?;
    let labels: Vec<String> = {
        let mut rs: Vec<usize> = sessions.iter().map(|s| s.replicate).collect();
        rs.sort_unstable();
        rs.dedup();
        rs.into_iter().map(|r| format!("br{r}")).collect()
    };
    fs::write(out.join("cross_day.csv"), cross_day_csv(&rows, &labels)?)?;
    if rows.len() >= 2 {
        fs::write(out.join("cross_day.svg"), cross_day_svg(&rows)?)?;
    }
    println!("cross-day transfer (trained on day 1):");
    print_cross_day(&rows);
    Ok(())
}

fn ar_baseline_cmd(args: &RunDirArgs) -> Result<()> {
    let (config, sessions) = load_run(&args.run_dir)?;
    let anchor = &sessions[0];
    let per_digit = ar_per_digit(
        &config,
        &anchor.schedule,
        &anchor.spontaneous,
        derive_seed(config.master_seed, "report-matrix", &[]),
    )?;
    let mean = per_digit.iter().sum::<f64>() / per_digit.len() as f64;
    let out = reports_dir(args);
    fs::create_dir_all(&out)?;
    let mut csv = String::from("row");
    for d in 0..NUM_CLASSES {
        csv.push_str(&format!(",digit_{d}"));
    }
    csv.push_str(",mean\r\nar");
    for v in &per_digit {
        csv.push_str(&format!(",{v:.6}"));
    }
    csv.push_str(&format!(",{mean:.6}\r\n"));
    fs::write(out.join("ar_baseline.csv"), csv)?;
    println!(
        "artificial reservoir over {} noise runs: {:.1}% mean",
        config.ar_noise_runs,
        100.0 * mean
    );
    for (d, v) in per_digit.iter().enumerate() {
        println!("  digit {d}: {:.1}%", 100.0 * v);
    }
    Ok(())
}

fn report_cmd(args: &RunDirArgs) -> Result<()> {
    let (config, sessions) = load_run(&args.run_dir)?;
    if args.out.is_some() {
        bail!("report always writes under <run_dir>/reports; use the narrower commands for custom paths");
    }
    let reports = write_reports(&sessions, &config, &args.run_dir)?;
    println!("window sweep:");
    print_sweep(&reports.sweep);
    println!("accuracy matrix:");
    for row in &reports.matrix.rows {
        println!("  {}: {:.1}% mean", row.label, 100.0 * row.mean);
    }
    println!("cross-day transfer:");
    print_cross_day(&reports.cross_day);
    Ok(())
}
