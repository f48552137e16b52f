//! Experiment harness: turns a declarative config into stimulation sessions
//! on disk and assembles the three headline reports (readout-window sweep,
//! per-digit accuracy matrix with the artificial-reservoir row, and cross-day
//! transfer with its shuffle control).
//!
//! A full run is laid out as
//!
//! ```text
//! out/
//!   config.toml         exact config used
//!   manifest.toml       tool version, config hash, master seed
//!   br1_day1/
//!     meta.toml         session provenance (seeds, hashes, sample counts)
//!     schedule.csv      trial order
//!     spontaneous.csv   pre-session spontaneous spikes
//!     spikes/trial_0000.csv ...
//!     features_w5.csv   features at the headline readout window
//!     traces/trial_0000.mear ...   (only when store_traces is set)
//!   br1_day2/ ...
//!   reports/
//!     window_sweep.{csv,svg}
//!     accuracy_matrix.{csv,svg}
//!     cross_day.{csv,svg}
//! ```
//!
//! Spike trains are the canonical stored artifact per trial; features at any
//! window can be recounted from them without re-simulation. Every seed below
//! is derived from the master seed and a fixed tag, so a config plus its
//! master seed regenerates the whole tree byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::culture::{
    record_spontaneous, simulate_trial, simulate_trial_with_trace, CultureModel,
};
use crate::detect::{read_spikes_csv_file, write_spikes_csv_file, SpikeTrain};
use crate::error::{Error, Result};
use crate::readout::{
    extract_features, read_features_csv_file, write_features_csv_file, ChannelMask, FeatureVector,
    ReadoutParams,
};
use crate::reservoir::{ar_forward, calibrate_noise, ARModel};
use crate::seed::derive_seed;
use crate::signal::{write_mear_file, NUM_CHANNELS};
use crate::slp::{
    cross_session_eval, cross_validate, evaluate, stratified_folds, train_slp, Hyperparams,
    NUM_CLASSES,
};
use crate::stim::{
    build_all_patterns, build_schedule, read_schedule_csv_file, write_schedule_csv_file,
    StimulationSchedule,
};
use crate::svg::{heatmap, line_chart, Series};

/// Folds used by every cross-validated accuracy in the reports.
pub const CV_FOLDS: usize = 5;

/// Non-overlapping spontaneous windows sampled when calibrating the
/// artificial reservoir's noise.
const AR_CALIBRATION_WINDOWS: usize = 200;

/// Quantization step for stored raw traces, microvolts per unit.
const TRACE_SCALE_UV: f32 = 0.1;

/// Directory name for the session of one replicate on one day.
pub fn session_name(replicate: usize, day: usize) -> String {
    format!("br{replicate}_day{day}")
}

fn ms_label(window_s: f64) -> String {
    let ms = window_s * 1000.0;
    if (ms - ms.round()).abs() < 1e-9 {
        format!("{}", ms.round() as i64)
    } else {
        format!("{ms}")
    }
}

// --- session data -----------------------------------------------------------

/// Derived seeds cover the whole u64 range, which TOML integers (i64) do
/// not, so they are stored as decimal strings.
mod u64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Provenance sidecar stored as `meta.toml` in every session directory.
/// Together with the config it is enough to reload or regenerate the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub replicate: usize,
    pub day: usize,
    pub session: String,
    pub config_hash: String,
    pub model_hash: String,
    pub sample_rate_hz: u32,
    pub trial_pre_s: f64,
    pub trial_post_s: f64,
    pub trial_n_samples: u64,
    pub spontaneous_n_samples: u64,
    pub n_trials: usize,
    #[serde(with = "u64_string")]
    pub schedule_seed: u64,
    pub repetitions: usize,
    pub inter_stimulus_s: f64,
    pub window_ms: f64,
    #[serde(with = "u64_string")]
    pub culture_seed: u64,
    #[serde(with = "u64_string")]
    pub spontaneous_seed: u64,
}

/// Everything one stimulation session produced.
#[derive(Debug, Clone)]
pub struct SessionDataset {
    pub replicate: usize,
    pub day: usize,
    pub name: String,
    pub schedule: StimulationSchedule,
    /// One feature vector per trial, at the headline readout window.
    pub features: Vec<FeatureVector>,
    /// One spike train per trial, aligned with the schedule.
    pub spike_trains: Vec<SpikeTrain>,
    pub spontaneous: SpikeTrain,
    pub model_hash: String,
    pub config_hash: String,
}

/// Builds the replicate's culture and drifts it forward to the requested day.
pub fn culture_for_day(
    config: &ExperimentConfig,
    replicate: usize,
    day: usize,
) -> Result<CultureModel> {
    if replicate == 0 || day == 0 {
        return Err(Error::invalid("replicate and day are 1-based"));
    }
    let mut params = config.culture.clone();
    params.seed = derive_seed(config.master_seed, "culture-model", &[replicate as u64]);
    let mut model = CultureModel::build(params)?;
    for step in 2..=day {
        let seed = derive_seed(config.master_seed, "drift", &[replicate as u64, step as u64]);
        model = model.advance_day(&config.drift, seed)?;
    }
    Ok(model)
}

fn with_session_context(name: &str, trial: Option<usize>, e: Error) -> Error {
    match e {
        Error::Simulation(msg) => Error::Simulation(match trial {
            Some(t) => format!("{name} trial {t}: {msg}"),
            None => format!("{name}: {msg}"),
        }),
        other => other,
    }
}

/// Runs one full stimulation session: builds (and drifts) the culture, plays
/// the schedule, extracts features at the configured window and records a
/// spontaneous segment. With `out_dir` set, everything is persisted under
/// `out_dir/br{replicate}_day{day}/`.
pub fn run_session(
    config: &ExperimentConfig,
    replicate: usize,
    day: usize,
    out_dir: Option<&Path>,
) -> Result<SessionDataset> {
    config.validate()?;
    if replicate == 0 || replicate > config.replicates {
        return Err(Error::range(format!(
            "replicate {replicate} outside 1..={}",
            config.replicates
        )));
    }
    if day == 0 || day > config.days {
        return Err(Error::range(format!("day {day} outside 1..={}", config.days)));
    }

    let name = session_name(replicate, day);
    let config_hash = config.config_hash()?;
    let culture_seed = derive_seed(config.master_seed, "culture-model", &[replicate as u64]);
    let model = culture_for_day(config, replicate, day)?;
    let model_hash = model.model_hash();
    let patterns = build_all_patterns(&config.glyph, &config.pulse)?;

    let schedule_seed = derive_seed(
        config.master_seed,
        "schedule",
        &[replicate as u64, day as u64],
    );
    let schedule = build_schedule(
        &patterns,
        config.schedule.repetitions,
        config.schedule.inter_stimulus_s,
        schedule_seed,
    )?;

    let fs_hz = config.culture.sample_rate_hz;
    let pre = config.timing.trial_pre_s;
    let post = config.timing.trial_post_s;
    let onset_sample = (pre * fs_hz as f64).round() as u64;

    let session_dir = out_dir.map(|d| d.join(&name));
    let traces_dir = match (&session_dir, config.store_traces) {
        (Some(dir), true) => {
            let t = dir.join("traces");
            fs::create_dir_all(&t)?;
            Some(t)
        }
        _ => None,
    };

    let mut spike_trains = Vec::with_capacity(schedule.len());
    let mut features = Vec::with_capacity(schedule.len());
    for trial in schedule.trials() {
        let seed = derive_seed(
            config.master_seed,
            "trial",
            &[replicate as u64, day as u64, trial.index as u64],
        );
        let pattern = &patterns[trial.label as usize];
        let train = if let Some(traces) = &traces_dir {
            let (train, rec) =
                simulate_trial_with_trace(&model, pattern, pre, post, seed, &config.trace)
                    .map_err(|e| with_session_context(&name, Some(trial.index), e))?;
            write_mear_file(
                &traces.join(format!("trial_{:04}.mear", trial.index)),
                &rec,
                TRACE_SCALE_UV,
            )?;
            train
        } else {
            simulate_trial(&model, pattern, pre, post, seed)
                .map_err(|e| with_session_context(&name, Some(trial.index), e))?
        };
        features.push(extract_features(
            &train,
            onset_sample,
            &config.readout,
            pattern,
            &name,
            trial.index,
        )?);
        spike_trains.push(train);
    }

    let spontaneous_seed = derive_seed(
        config.master_seed,
        "spontaneous",
        &[replicate as u64, day as u64],
    );
    let spontaneous = record_spontaneous(&model, config.timing.spontaneous_s, spontaneous_seed)
        .map_err(|e| with_session_context(&name, None, e))?;

    let dataset = SessionDataset {
        replicate,
        day,
        name: name.clone(),
        schedule,
        features,
        spike_trains,
        spontaneous,
        model_hash,
        config_hash: config_hash.clone(),
    };

    if let Some(dir) = &session_dir {
        let meta = SessionMeta {
            replicate,
            day,
            session: name,
            config_hash,
            model_hash: dataset.model_hash.clone(),
            sample_rate_hz: fs_hz,
            trial_pre_s: pre,
            trial_post_s: post,
            trial_n_samples: dataset.spike_trains[0].n_samples(),
            spontaneous_n_samples: dataset.spontaneous.n_samples(),
            n_trials: dataset.schedule.len(),
            schedule_seed,
            repetitions: config.schedule.repetitions,
            inter_stimulus_s: config.schedule.inter_stimulus_s,
            window_ms: config.readout.window_s * 1000.0,
            culture_seed,
            spontaneous_seed,
        };
        persist_session(dir, &meta, &dataset, config)?;
    }
    Ok(dataset)
}

fn persist_session(
    dir: &Path,
    meta: &SessionMeta,
    dataset: &SessionDataset,
    config: &ExperimentConfig,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta_text =
        toml::to_string_pretty(meta).map_err(|e| Error::Config(format!("meta: {e}")))?;
    fs::write(dir.join("meta.toml"), meta_text)?;
    write_schedule_csv_file(&dir.join("schedule.csv"), &dataset.schedule)?;
    write_spikes_csv_file(&dir.join("spontaneous.csv"), &dataset.spontaneous)?;

    let spikes_dir = dir.join("spikes");
    fs::create_dir_all(&spikes_dir)?;
    for (train, trial) in dataset.spike_trains.iter().zip(dataset.schedule.trials()) {
        write_spikes_csv_file(
            &spikes_dir.join(format!("trial_{:04}.csv", trial.index)),
            train,
        )?;
    }

    let features_name = format!("features_w{}.csv", ms_label(config.readout.window_s));
    write_features_csv_file(&dir.join(features_name), &dataset.features)?;
    Ok(())
}

/// Reloads a persisted session directory, verifying that it was produced by
/// this exact config.
pub fn load_session(dir: &Path, config: &ExperimentConfig) -> Result<SessionDataset> {
    config.validate()?;
    let meta_text = fs::read_to_string(dir.join("meta.toml"))?;
    let meta: SessionMeta =
        toml::from_str(&meta_text).map_err(|e| Error::format(format!("meta.toml: {e}")))?;
    let config_hash = config.config_hash()?;
    if meta.config_hash != config_hash {
        return Err(Error::mismatch(format!(
            "session {} was produced by config {}, not {}",
            meta.session, meta.config_hash, config_hash
        )));
    }

    let schedule = read_schedule_csv_file(
        &dir.join("schedule.csv"),
        meta.inter_stimulus_s,
        meta.repetitions,
        meta.schedule_seed,
    )?;
    if schedule.len() != meta.n_trials {
        return Err(Error::mismatch(format!(
            "schedule holds {} trials, meta says {}",
            schedule.len(),
            meta.n_trials
        )));
    }

    let spontaneous = read_spikes_csv_file(
        &dir.join("spontaneous.csv"),
        NUM_CHANNELS,
        meta.sample_rate_hz,
        0.0,
        meta.spontaneous_n_samples,
    )?;

    let spikes_dir = dir.join("spikes");
    let mut spike_trains = Vec::with_capacity(meta.n_trials);
    for trial in schedule.trials() {
        spike_trains.push(read_spikes_csv_file(
            &spikes_dir.join(format!("trial_{:04}.csv", trial.index)),
            NUM_CHANNELS,
            meta.sample_rate_hz,
            -meta.trial_pre_s,
            meta.trial_n_samples,
        )?);
    }

    let patterns = build_all_patterns(&config.glyph, &config.pulse)?;
    let mut masks = Vec::with_capacity(patterns.len());
    for p in &patterns {
        masks.push(ChannelMask::for_pattern(p, config.readout.mask_half_width)?);
    }
    let features_name = format!("features_w{}.csv", ms_label(config.readout.window_s));
    let features = read_features_csv_file(
        &dir.join(features_name),
        config.readout.window_s,
        |label| masks[label as usize].clone(),
    )?;
    if features.len() != meta.n_trials {
        return Err(Error::mismatch(format!(
            "feature file holds {} rows, meta says {}",
            features.len(),
            meta.n_trials
        )));
    }

    Ok(SessionDataset {
        replicate: meta.replicate,
        day: meta.day,
        name: meta.session,
        schedule,
        features,
        spike_trains,
        spontaneous,
        model_hash: meta.model_hash,
        config_hash,
    })
}

/// Recounts every trial's features at a different readout window from the
/// stored spike trains. The trials themselves are untouched, so accuracies
/// across windows are paired.
pub fn features_at_window(
    session: &SessionDataset,
    config: &ExperimentConfig,
    window_s: f64,
) -> Result<Vec<FeatureVector>> {
    let params = ReadoutParams {
        window_s,
        ..config.readout
    };
    params.validate()?;
    let patterns = build_all_patterns(&config.glyph, &config.pulse)?;
    let onset =
        (config.timing.trial_pre_s * config.culture.sample_rate_hz as f64).round() as u64;
    session
        .schedule
        .trials()
        .iter()
        .zip(&session.spike_trains)
        .map(|(trial, train)| {
            extract_features(
                train,
                onset,
                &params,
                &patterns[trial.label as usize],
                &session.name,
                trial.index,
            )
        })
        .collect()
}

// --- window sweep -----------------------------------------------------------

/// One readout window's row of the sweep: the pooled mean with its standard
/// error across sessions, plus each session's own cross-validated mean.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSweepRow {
    pub window_ms: f64,
    pub mean_accuracy: f64,
    pub sem_accuracy: f64,
    pub session_accuracies: Vec<f64>,
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Cross-validates every session at every configured window and aggregates
/// mean accuracy with SEM = sd/sqrt(sessions) per window.
pub fn window_sweep(
    sessions: &[SessionDataset],
    config: &ExperimentConfig,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<WindowSweepRow>> {
    if sessions.is_empty() {
        return Err(Error::invalid("window sweep needs at least one session"));
    }
    let n_trials = sessions[0].schedule.len();
    for s in sessions {
        if s.schedule.len() != n_trials {
            return Err(Error::mismatch(
                "sessions in a sweep must share the schedule shape",
            ));
        }
    }

    let mut rows = Vec::with_capacity(config.windows_ms.len());
    for (w, &window_ms) in config.windows_ms.iter().enumerate() {
        let mut accs = Vec::with_capacity(sessions.len());
        for (s, session) in sessions.iter().enumerate() {
            let feats = features_at_window(session, config, window_ms / 1000.0)?;
            let cv_seed = derive_seed(seed, "sweep-cv", &[s as u64, w as u64]);
            let report = cross_validate(&feats, CV_FOLDS, hp, cv_seed)?;
            accs.push(report.mean_accuracy);
        }
        let (mean, sd) = mean_and_sd(&accs);
        rows.push(WindowSweepRow {
            window_ms,
            mean_accuracy: mean,
            sem_accuracy: sd / (accs.len() as f64).sqrt(),
            session_accuracies: accs,
        });
    }
    Ok(rows)
}

/// Sweep table as CSV: pooled statistics first, then one column per session.
pub fn sweep_csv(rows: &[WindowSweepRow], session_names: &[String]) -> Result<String> {
    let mut out = String::from("window_ms,mean_accuracy,sem_accuracy");
    for name in session_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str("\r\n");
    for row in rows {
        if row.session_accuracies.len() != session_names.len() {
            return Err(Error::mismatch("one accuracy per session required"));
        }
        out.push_str(&ms_label(row.window_ms / 1000.0));
        out.push_str(&format!(
            ",{:.6},{:.6}",
            row.mean_accuracy, row.sem_accuracy
        ));
        for acc in &row.session_accuracies {
            out.push_str(&format!(",{acc:.6}"));
        }
        out.push_str("\r\n");
    }
    Ok(out)
}

/// Sweep figure: mean accuracy against window length with SEM error bars.
pub fn sweep_svg(rows: &[WindowSweepRow]) -> Result<String> {
    let xs: Vec<f64> = rows.iter().map(|r| r.window_ms).collect();
    let series = Series {
        name: "mean accuracy",
        ys: rows.iter().map(|r| r.mean_accuracy).collect(),
        err: Some(rows.iter().map(|r| r.sem_accuracy).collect()),
    };
    line_chart(
        "Readout window sweep",
        "window (ms)",
        "classification accuracy",
        &xs,
        &[series],
    )
}

// --- accuracy matrix --------------------------------------------------------

/// One row of the per-digit accuracy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub label: String,
    pub per_digit: Vec<f64>,
    pub mean: f64,
}

/// Per-digit accuracies: one row per replicate (averaged over its days) and a
/// final row for the artificial reservoir averaged over noise runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub rows: Vec<MatrixRow>,
}

fn matrix_row(label: String, per_digit: Vec<f64>) -> MatrixRow {
    let mean = per_digit.iter().sum::<f64>() / per_digit.len() as f64;
    MatrixRow {
        label,
        per_digit,
        mean,
    }
}

/// Average per-digit accuracy of the artificial reservoir over
/// `config.ar_noise_runs` independent noise realizations. Each run forwards
/// the schedule through the reservoir with fresh Poisson noise, trains on
/// four folds and scores the held-out fold.
pub fn ar_per_digit(
    config: &ExperimentConfig,
    schedule: &StimulationSchedule,
    spontaneous: &SpikeTrain,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut params = config.ar.clone();
    params.seed = derive_seed(seed, "ar-model", &[]);
    let model = ARModel::build(params)?;
    let calibration = calibrate_noise(
        spontaneous,
        config.readout.window_s,
        AR_CALIBRATION_WINDOWS,
        derive_seed(seed, "ar-calibration", &[]),
    )?;
    let patterns = build_all_patterns(&config.glyph, &config.pulse)?;

    let mut correct = vec![0usize; NUM_CLASSES];
    let mut totals = vec![0usize; NUM_CLASSES];
    for run in 0..config.ar_noise_runs {
        let run_seed = derive_seed(seed, "ar-run", &[run as u64]);
        let mut features = Vec::with_capacity(schedule.len());
        for trial in schedule.trials() {
            features.push(ar_forward(
                &model,
                &patterns[trial.label as usize],
                &calibration,
                config.ar_noise_multiplier,
                config.readout.mask_half_width,
                "ar",
                trial.index,
                run_seed,
            )?);
        }
        let labels: Vec<u8> = features.iter().map(|fv| fv.label).collect();
        let folds = stratified_folds(&labels, CV_FOLDS, derive_seed(seed, "ar-split", &[run as u64]))?;
        let test: Vec<FeatureVector> = folds[0].iter().map(|&i| features[i].clone()).collect();
        let train: Vec<FeatureVector> = folds[1..]
            .iter()
            .flat_map(|fold| fold.iter().map(|&i| features[i].clone()))
            .collect();
        let hp = Hyperparams {
            seed: derive_seed(seed, "ar-train", &[run as u64]),
            ..config.classifier.clone()
        };
        let slp = train_slp(&train, &hp)?;
        let (_, confusion) = evaluate(&slp, &test)?;
        for (c, row) in confusion.iter().enumerate() {
            correct[c] += row[c];
            totals[c] += row.iter().sum::<usize>();
        }
    }
    Ok(correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect())
}

/// Builds the per-digit accuracy matrix: replicate rows from cross-validated
/// sessions (averaged over days), then the artificial-reservoir row. The AR
/// noise level is calibrated against the first session's spontaneous segment
/// and its trials follow that session's schedule.
pub fn accuracy_matrix(
    sessions: &[SessionDataset],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<AccuracyMatrix> {
    if sessions.is_empty() {
        return Err(Error::invalid("accuracy matrix needs at least one session"));
    }
    let mut replicates: Vec<usize> = sessions.iter().map(|s| s.replicate).collect();
    replicates.sort_unstable();
    replicates.dedup();

    let mut rows = Vec::with_capacity(replicates.len() + 1);
    for &r in &replicates {
        let mut acc = vec![0.0f64; NUM_CLASSES];
        let mut days = 0usize;
        for session in sessions.iter().filter(|s| s.replicate == r) {
            let cv_seed = derive_seed(seed, "matrix-cv", &[r as u64, session.day as u64]);
            let report = cross_validate(&session.features, CV_FOLDS, &config.classifier, cv_seed)?;
            for (a, p) in acc.iter_mut().zip(&report.per_class_accuracy) {
                *a += p;
            }
            days += 1;
        }
        for a in acc.iter_mut() {
            *a /= days as f64;
        }
        rows.push(matrix_row(format!("br{r}"), acc));
    }

    let anchor = &sessions[0];
    let ar = ar_per_digit(config, &anchor.schedule, &anchor.spontaneous, seed)?;
    rows.push(matrix_row("ar".to_string(), ar));
    Ok(AccuracyMatrix { rows })
}

/// Matrix as CSV: one row per replicate plus the reservoir, one column per
/// digit, trailing row mean.
pub fn matrix_csv(matrix: &AccuracyMatrix) -> String {
    let mut out = String::from("row");
    for d in 0..NUM_CLASSES {
        out.push_str(&format!(",digit_{d}"));
    }
    out.push_str(",mean\r\n");
    for row in &matrix.rows {
        out.push_str(&row.label);
        for v in &row.per_digit {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push_str(&format!(",{:.6}\r\n", row.mean));
    }
    out
}

/// Matrix as an SVG heatmap with a fixed 0..1 color scale.
pub fn matrix_svg(matrix: &AccuracyMatrix) -> Result<String> {
    let row_labels: Vec<String> = matrix.rows.iter().map(|r| r.label.clone()).collect();
    let col_labels: Vec<String> = (0..NUM_CLASSES).map(|d| d.to_string()).collect();
    let values: Vec<Vec<f64>> = matrix.rows.iter().map(|r| r.per_digit.clone()).collect();
    heatmap(
        "Per-digit accuracy",
        &row_labels,
        &col_labels,
        &values,
        0.0,
        1.0,
    )
}

// --- cross-day transfer -----------------------------------------------------

/// Aggregate of training on Day 1 and testing on one later (or the same) day,
/// across replicates, next to the spatially shuffled control.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDayRow {
    pub day: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub shuffled_mean: f64,
    pub shuffled_sd: f64,
    pub replicate_accuracies: Vec<f64>,
    pub replicate_shuffled: Vec<f64>,
}

/// For every replicate, trains one model on its Day 1 features and evaluates
/// each day both as recorded and spatially shuffled, then aggregates
/// mean ± sd per day across replicates.
pub fn cross_day_experiment(
    sessions: &[SessionDataset],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<CrossDayRow>> {
    let mut replicates: Vec<usize> = sessions.iter().map(|s| s.replicate).collect();
    replicates.sort_unstable();
    replicates.dedup();
    if replicates.is_empty() {
        return Err(Error::invalid("cross-day needs at least one session"));
    }

    let mut days: Vec<usize> = sessions.iter().map(|s| s.day).collect();
    days.sort_unstable();
    days.dedup();
    if days.first() != Some(&1) {
        return Err(Error::invalid("cross-day needs Day 1 sessions to train on"));
    }

    // per_day[d][r]
    let mut per_day = vec![Vec::with_capacity(replicates.len()); days.len()];
    let mut per_day_shuffled = vec![Vec::with_capacity(replicates.len()); days.len()];
    for &r in &replicates {
        let mut by_day = Vec::with_capacity(days.len());
        for &d in &days {
            let session = sessions
                .iter()
                .find(|s| s.replicate == r && s.day == d)
                .ok_or_else(|| {
                    Error::mismatch(format!("replicate {r} is missing day {d}"))
                })?;
            by_day.push(session.features.clone());
        }
        let hp = Hyperparams {
            seed: derive_seed(seed, "cross-day-train", &[r as u64]),
            ..config.classifier.clone()
        };
        let evals = cross_session_eval(
            &by_day[0],
            &by_day,
            &hp,
            derive_seed(seed, "cross-day", &[r as u64]),
        )?;
        for (d, eval) in evals.iter().enumerate() {
            per_day[d].push(eval.accuracy);
            per_day_shuffled[d].push(eval.shuffled_accuracy);
        }
    }

    Ok(days
        .iter()
        .zip(per_day.into_iter().zip(per_day_shuffled))
        .map(|(&day, (accs, shuffled))| {
            let (mean_accuracy, sd_accuracy) = mean_and_sd(&accs);
            let (shuffled_mean, shuffled_sd) = mean_and_sd(&shuffled);
            CrossDayRow {
                day,
                mean_accuracy,
                sd_accuracy,
                shuffled_mean,
                shuffled_sd,
                replicate_accuracies: accs,
                replicate_shuffled: shuffled,
            }
        })
        .collect())
}

/// Cross-day table as CSV with per-replicate columns after the aggregates.
pub fn cross_day_csv(rows: &[CrossDayRow], replicate_labels: &[String]) -> Result<String> {
    let mut out = String::from("day,mean_accuracy,sd_accuracy,shuffled_mean,shuffled_sd");
    for label in replicate_labels {
        out.push_str(&format!(",{label}"));
    }
    for label in replicate_labels {
        out.push_str(&format!(",shuffled_{label}"));
    }
    out.push_str("\r\n");
    for row in rows {
        if row.replicate_accuracies.len() != replicate_labels.len() {
            return Err(Error::mismatch("one accuracy per replicate required"));
        }
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.day, row.mean_accuracy, row.sd_accuracy, row.shuffled_mean, row.shuffled_sd
        ));
        for acc in &row.replicate_accuracies {
            out.push_str(&format!(",{acc:.6}"));
        }
        for acc in &row.replicate_shuffled {
            out.push_str(&format!(",{acc:.6}"));
        }
        out.push_str("\r\n");
    }
    Ok(out)
}

/// Cross-day figure: trained and shuffled accuracy per day with sd bars.
pub fn cross_day_svg(rows: &[CrossDayRow]) -> Result<String> {
    let xs: Vec<f64> = rows.iter().map(|r| r.day as f64).collect();
    let trained = Series {
        name: "trained on day 1",
        ys: rows.iter().map(|r| r.mean_accuracy).collect(),
        err: Some(rows.iter().map(|r| r.sd_accuracy).collect()),
    };
    let shuffled = Series {
        name: "shuffled control",
        ys: rows.iter().map(|r| r.shuffled_mean).collect(),
        err: Some(rows.iter().map(|r| r.shuffled_sd).collect()),
    };
    line_chart(
        "Cross-day transfer",
        "test day",
        "classification accuracy",
        &xs,
        &[trained, shuffled],
    )
}

// --- full run ---------------------------------------------------------------

/// Resolvable provenance of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
}

/// The three assembled reports of a full run.
#[derive(Debug, Clone)]
pub struct RunReports {
    pub sweep: Vec<WindowSweepRow>,
    pub matrix: AccuracyMatrix,
    pub cross_day: Vec<CrossDayRow>,
}

fn ensure_fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::invalid(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        if fs::read_dir(dir)?.next().is_some() {
            return Err(Error::invalid(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes the reports of already-run sessions under `out_dir/reports/`.
/// Figures need at least two x positions, so single-window or single-day
/// configs get the CSV only.
pub fn write_reports(
    sessions: &[SessionDataset],
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunReports> {
    let reports = out_dir.join("reports");
    fs::create_dir_all(&reports)?;
    let master = config.master_seed;

    let sweep_hp = Hyperparams {
        epochs: config.sweep_epochs,
        ..config.classifier.clone()
    };
    let sweep = window_sweep(
        sessions,
        config,
        &sweep_hp,
        derive_seed(master, "report-sweep", &[]),
    )?;
    let session_names: Vec<String> = sessions.iter().map(|s| s.name.clone()).collect();
    fs::write(
        reports.join("window_sweep.csv"),
        sweep_csv(&sweep, &session_names)?,
    )?;
    if sweep.len() >= 2 {
        fs::write(reports.join("window_sweep.svg"), sweep_svg(&sweep)?)?;
    }

    let matrix = accuracy_matrix(sessions, config, derive_seed(master, "report-matrix", &[]))?;
    fs::write(reports.join("accuracy_matrix.csv"), matrix_csv(&matrix))?;
    fs::write(reports.join("accuracy_matrix.svg"), matrix_svg(&matrix)?)?;

    let cross_day =
        cross_day_experiment(sessions, config, derive_seed(master, "report-cross-day", &[]))?;
    let replicate_labels: Vec<String> = {
        let mut rs: Vec<usize> = sessions.iter().map(|s| s.replicate).collect();
        rs.sort_unstable();
        rs.dedup();
        rs.into_iter().map(|r| format!("br{r}")).collect()
    };
    fs::write(
        reports.join("cross_day.csv"),
        cross_day_csv(&cross_day, &replicate_labels)?,
    )?;
    if cross_day.len() >= 2 {
        fs::write(reports.join("cross_day.svg"), cross_day_svg(&cross_day)?)?;
    }

    Ok(RunReports {
        sweep,
        matrix,
        cross_day,
    })
}

/// Runs the whole configured experiment into a fresh directory: every session
/// of the replicate-by-day grid, persisted, plus the three reports and a
/// manifest tying the outputs to the config hash and master seed.
pub fn run_full(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReports> {
    config.validate()?;
    ensure_fresh_dir(out_dir)?;

    config.save_file(&out_dir.join("config.toml"))?;
    let manifest = Manifest {
        tool: "mea-reservoir".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.config_hash()?,
        master_seed: config.master_seed,
    };
    let manifest_text =
        toml::to_string_pretty(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    fs::write(out_dir.join("manifest.toml"), manifest_text)?;

    let mut sessions = Vec::with_capacity(config.replicates * config.days);
    for r in 1..=config.replicates {
        for d in 1..=config.days {
            sessions.push(run_session(config, r, d, Some(out_dir))?);
        }
    }
    write_reports(&sessions, config, out_dir)
}

/// Reloads every session of a persisted run directory, in replicate-major
/// order, using the stored config.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, Vec<SessionDataset>)> {
    let config = ExperimentConfig::load_file(&dir.join("config.toml"))?;
    let manifest_text = fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: Manifest =
        toml::from_str(&manifest_text).map_err(|e| Error::format(format!("manifest.toml: {e}")))?;
    if manifest.config_hash != config.config_hash()? {
        return Err(Error::mismatch(
            "manifest config hash disagrees with config.toml",
        ));
    }
    let mut sessions = Vec::with_capacity(config.replicates * config.days);
    for r in 1..=config.replicates {
        for d in 1..=config.days {
            sessions.push(load_session(&dir.join(session_name(r, d)), &config)?);
        }
    }
    Ok((config, sessions))
}
