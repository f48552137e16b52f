//! Acceptance checks for the whole workbench, one test per criterion. Every
//! test prints a single `PASS <criterion>: ...` line with the measured
//! quantities; run with `--nocapture` to see them on success.
//!
//! The expensive criteria share one lazily built default 3x3 session grid
//! (three replicates, three days, in memory). Where a criterion carries a
//! runtime budget that depends on the grid, the grid's build time is counted
//! into the elapsed time it asserts on.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;

use mea_reservoir_core::config::ExperimentConfig;
use mea_reservoir_core::detect::{detect_spikes, detect_spikes_reference, DetectorParams};
use mea_reservoir_core::harness::{
    cross_day_experiment, run_session, window_sweep, SessionDataset, CV_FOLDS,
};
use mea_reservoir_core::readout::{extract_features, FeatureVector, ReadoutParams};
use mea_reservoir_core::reservoir::{ar_forward, calibrate_noise, ARModel, ARParams};
use mea_reservoir_core::seed::{derive_seed, rng_from_seed};
use mea_reservoir_core::signal::{
    grid_to_channel, random_spike_times, synthesize_trace, SpikeTemplate, GRID_SIDE,
    NUM_CHANNELS,
};
use mea_reservoir_core::slp::{
    batch_loss_and_grad, cross_validate, evaluate, stratified_folds, train_slp, Hyperparams,
    NUM_CLASSES,
};
use mea_reservoir_core::stim::{build_all_patterns, build_pattern, GlyphLayout, PulseParams};
use mea_reservoir_core::detect::SpikeTrain;
use mea_reservoir_core::readout::shuffle_spatial;

const FS: u32 = 20_000;

/// The default replicate-by-day grid, built once and shared.
fn default_grid() -> &'static (ExperimentConfig, Vec<SessionDataset>, Duration) {
    static GRID: OnceLock<(ExperimentConfig, Vec<SessionDataset>, Duration)> = OnceLock::new();
    GRID.get_or_init(|| {
        let t0 = Instant::now();
        let config = ExperimentConfig::default();
        let mut sessions = Vec::new();
        for r in 1..=config.replicates {
            for d in 1..=config.days {
                sessions.push(run_session(&config, r, d, None).unwrap());
            }
        }
        (config, sessions, t0.elapsed())
    })
}

fn grid_session(replicate: usize, day: usize) -> &'static SessionDataset {
    let (_, sessions, _) = default_grid();
    sessions
        .iter()
        .find(|s| s.replicate == replicate && s.day == day)
        .unwrap()
}

// --- criterion: detector equals its reference oracle ------------------------

#[test]
fn detector_matches_reference_on_randomized_recordings() {
    let t0 = Instant::now();
    let params = DetectorParams::default();
    let n_samples = 2 * FS as usize;
    let noise_sd = 6.0f32;
    for case in 0..50u64 {
        let mut rng = rng_from_seed(derive_seed(901, "oracle-case", &[case]));
        let snr = rng.gen_range(2.0f32..12.0);
        let template = SpikeTemplate::biphasic(snr * noise_sd, FS).unwrap();
        let spikes: Vec<Vec<u64>> = (0..64)
            .map(|_| {
                let count = rng.gen_range(0..60);
                random_spike_times(count, n_samples, 60, 40, &mut rng)
            })
            .collect();
        let (rec, _) = synthesize_trace(
            &spikes,
            n_samples,
            FS,
            0.0,
            noise_sd,
            &template,
            derive_seed(901, "oracle-noise", &[case]),
        )
        .unwrap();
        let fast = detect_spikes(&rec, &params).unwrap();
        let slow = detect_spikes_reference(&rec, &params).unwrap();
        assert_eq!(
            fast, slow,
            "FAIL detector oracle: case {case} (SNR {snr:.1}) disagrees with the reference"
        );
    }
    let elapsed = t0.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "FAIL detector oracle: {:.1} s exceeds the 60 s budget",
        elapsed.as_secs_f64()
    );
    println!(
        "PASS detector oracle: 50/50 randomized 64-channel recordings identical in {:.1} s (budget 60 s)",
        elapsed.as_secs_f64()
    );
}

// --- criterion: detector sensitivity and specificity ------------------------

#[test]
fn detector_recall_and_false_positives_meet_targets() {
    let params = DetectorParams::default();
    assert_eq!((params.thr_low, params.thr_high), (3.0, 5.0));
    let n_channels = 8;
    let n_samples = 2 * FS as usize;
    let noise_sd = 5.0f32;
    let template = SpikeTemplate::biphasic(8.0 * noise_sd, FS).unwrap();
    let tolerance = 20u64;

    let mut recalls = Vec::with_capacity(100);
    let mut fp_rates = Vec::with_capacity(100);
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(derive_seed(902, "sensitivity", &[seed]));
        let spikes: Vec<Vec<u64>> = (0..n_channels)
            .map(|_| random_spike_times(40, n_samples, 60, 100, &mut rng))
            .collect();
        let (rec, truth) = synthesize_trace(
            &spikes,
            n_samples,
            FS,
            0.0,
            noise_sd,
            &template,
            derive_seed(902, "sensitivity-noise", &[seed]),
        )
        .unwrap();
        let detected = detect_spikes(&rec, &params).unwrap();
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, times) in truth.spike_samples.iter().enumerate() {
            let found = detected.channel(c).unwrap();
            total += times.len();
            matched += times
                .iter()
                .filter(|&&t| found.iter().any(|&f| f.abs_diff(t) <= tolerance))
                .count();
        }
        recalls.push(matched as f64 / total as f64);

        let silence = vec![Vec::new(); n_channels];
        let (noise_rec, _) = synthesize_trace(
            &silence,
            n_samples,
            FS,
            0.0,
            noise_sd,
            &template,
            derive_seed(902, "noise-only", &[seed]),
        )
        .unwrap();
        let false_hits = detect_spikes(&noise_rec, &params).unwrap().total_spikes();
        fp_rates.push(false_hits as f64 / (n_channels as f64 * 2.0));
    }

    let mean_recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let mean_fp = fp_rates.iter().sum::<f64>() / fp_rates.len() as f64;
    assert!(
        mean_recall >= 0.95,
        "FAIL detector sensitivity: recall {mean_recall:.4} below 0.95 at SNR 8"
    );
    assert!(
        mean_fp < 1.0,
        "FAIL detector sensitivity: {mean_fp:.3} false positives per channel-second on noise"
    );
    println!(
        "PASS detector sensitivity: recall {mean_recall:.4} (>= 0.95), false positives \
         {mean_fp:.3} Hz/channel (< 1) over 100 seeds at SNR 8"
    );
}

// --- criterion: feature extraction is an exact count ------------------------

fn random_train(rng: &mut impl Rng, n_samples: u64) -> SpikeTrain {
    let mut per_channel: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for _ in 0..200 {
        let c = rng.gen_range(0..NUM_CHANNELS);
        let t = rng.gen_range(0..n_samples);
        per_channel.entry(c).or_default().push(t);
    }
    let mut spikes = vec![Vec::new(); NUM_CHANNELS];
    for (c, mut times) in per_channel {
        times.sort_unstable();
        times.dedup();
        spikes[c] = times;
    }
    SpikeTrain::from_parts(FS, -0.1, n_samples, spikes).unwrap()
}

#[test]
fn feature_counts_match_a_brute_force_recount() {
    let layout = GlyphLayout::default();
    let pulse = PulseParams::default();
    let patterns = build_all_patterns(&layout, &pulse).unwrap();
    let mut rng = rng_from_seed(derive_seed(903, "recount", &[]));
    let n_samples = 6000u64;

    for case in 0..1000usize {
        let train = random_train(&mut rng, n_samples);
        let window_s = rng.gen_range(0.005..0.050);
        let params = ReadoutParams {
            window_s,
            ..ReadoutParams::default()
        };
        let window_samples = params.window_samples(FS);
        let onset = rng.gen_range(0..n_samples - window_samples);
        let pattern = &patterns[case % NUM_CLASSES];
        let fv = extract_features(&train, onset, &params, pattern, "acc", case).unwrap();

        for c in 0..NUM_CHANNELS {
            let expected = if fv.mask.is_masked(c) {
                0
            } else {
                train
                    .channel(c)
                    .unwrap()
                    .iter()
                    .filter(|&&t| t >= onset && t <= onset + window_samples)
                    .count()
            };
            assert_eq!(
                fv.values()[c],
                expected as f64,
                "FAIL feature recount: case {case} channel {c}"
            );
        }
    }
    println!("PASS feature recount: 1000 random spike trains integer-exact against brute force");
}

#[test]
fn channel_masks_cover_exactly_the_stimulated_neighborhoods() {
    let pulse = PulseParams::default();
    let layouts = [
        GlyphLayout::default(),
        GlyphLayout {
            origin_row: 5,
            origin_col: 8,
            pairs_per_segment: 2,
        },
        GlyphLayout {
            origin_row: 40,
            origin_col: 44,
            pairs_per_segment: 4,
        },
    ];
    let half_width = ReadoutParams::default().mask_half_width;
    let mut checked = 0usize;
    for layout in &layouts {
        for label in 0..NUM_CLASSES as u8 {
            let pattern = build_pattern(label, layout, &pulse).unwrap();
            let mask = mea_reservoir_core::readout::ChannelMask::for_pattern(&pattern, half_width)
                .unwrap();
            let stimulated: Vec<(usize, usize)> = pattern
                .stimulated_channels()
                .iter()
                .map(|&c| (c as usize / GRID_SIDE, c as usize % GRID_SIDE))
                .collect();
            for row in 0..GRID_SIDE {
                for col in 0..GRID_SIDE {
                    let near = stimulated.iter().any(|&(r, c)| {
                        r.abs_diff(row).max(c.abs_diff(col)) <= half_width
                    });
                    let c = grid_to_channel(row, col).unwrap();
                    assert_eq!(
                        mask.is_masked(c),
                        near,
                        "FAIL mask soundness: layout ({},{}) label {label} channel {c}",
                        layout.origin_row,
                        layout.origin_col
                    );
                }
            }
            checked += 1;
        }
    }
    println!(
        "PASS mask soundness: {checked} pattern/layout combinations match the neighborhood rule \
         on all {NUM_CHANNELS} channels"
    );
}

// --- criterion: shuffled evaluation sits at chance --------------------------

#[test]
fn shuffled_evaluation_scores_at_chance() {
    let (config, _, grid_time) = default_grid();
    let t0 = Instant::now();

    let mut models = Vec::new();
    for r in 1..=config.replicates {
        let day1 = grid_session(r, 1);
        let hp = Hyperparams {
            seed: derive_seed(904, "shuffle-train", &[r as u64]),
            ..config.classifier.clone()
        };
        models.push(train_slp(&day1.features, &hp).unwrap());
    }

    let mut accs = Vec::with_capacity(20);
    for master in 0..20u64 {
        let r = (master as usize % config.replicates) + 1;
        let day2 = grid_session(r, 2);
        let shuffled: Vec<FeatureVector> = day2
            .features
            .iter()
            .enumerate()
            .map(|(t, fv)| shuffle_spatial(fv, derive_seed(master, "acceptance-shuffle", &[t as u64])))
            .collect();
        let (acc, _) = evaluate(&models[r - 1], &shuffled).unwrap();
        accs.push(acc);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let elapsed = t0.elapsed() + *grid_time;
    assert!(
        (0.05..=0.15).contains(&mean),
        "FAIL shuffle control: mean accuracy {mean:.4} outside [0.05, 0.15]"
    );
    assert!(
        elapsed < Duration::from_secs(300),
        "FAIL shuffle control: {:.0} s exceeds the 5 min budget",
        elapsed.as_secs_f64()
    );
    println!(
        "PASS shuffle control: mean accuracy {:.1}% over 20 seeds (within [5%, 15%]) in {:.0} s \
         (budget 300 s)",
        100.0 * mean,
        elapsed.as_secs_f64()
    );
}

// --- criterion: artificial reservoir separability under noise ---------------

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; 0 when either side
/// has no variation.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[test]
fn artificial_reservoir_separates_digits_and_degrades_with_noise() {
    let (config, _, _) = default_grid();
    let spont = &grid_session(1, 1).spontaneous;

    let ar = ARModel::build(ARParams {
        seed: derive_seed(905, "ar-model", &[]),
        ..config.ar.clone()
    })
    .unwrap();
    let calib = calibrate_noise(
        spont,
        config.readout.window_s,
        200,
        derive_seed(905, "ar-calibration", &[]),
    )
    .unwrap();
    let patterns = build_all_patterns(&config.glyph, &config.pulse).unwrap();
    let reps = 20usize;
    let forward_all = |mult: f64, seed: u64| -> Vec<FeatureVector> {
        (0..reps * NUM_CLASSES)
            .map(|i| {
                ar_forward(
                    &ar,
                    &patterns[i % NUM_CLASSES],
                    &calib,
                    mult,
                    config.readout.mask_half_width,
                    "ar",
                    i,
                    seed,
                )
                .unwrap()
            })
            .collect()
    };

    let zero = forward_all(0.0, 0);
    let report = cross_validate(&zero, CV_FOLDS, &config.classifier, 905).unwrap();
    assert_eq!(
        report.mean_accuracy, 1.0,
        "FAIL AR separability: zero-noise CV accuracy {:.4} is not 100%",
        report.mean_accuracy
    );

    let multipliers = [0.0, 0.5, 1.0, 2.0, 4.0];
    let hp = Hyperparams {
        epochs: 400,
        ..config.classifier.clone()
    };
    let mut means = Vec::with_capacity(multipliers.len());
    for (m, &mult) in multipliers.iter().enumerate() {
        let mut accs = Vec::with_capacity(10);
        for noise_seed in 0..10u64 {
            let feats = forward_all(mult, derive_seed(905, "ar-sweep", &[m as u64, noise_seed]));
            let labels: Vec<u8> = feats.iter().map(|f| f.label).collect();
            let folds = stratified_folds(
                &labels,
                CV_FOLDS,
                derive_seed(905, "ar-split", &[m as u64, noise_seed]),
            )
            .unwrap();
            let test: Vec<FeatureVector> = folds[0].iter().map(|&i| feats[i].clone()).collect();
            let train: Vec<FeatureVector> = folds[1..]
                .iter()
                .flat_map(|f| f.iter().map(|&i| feats[i].clone()))
                .collect();
            let run_hp = Hyperparams {
                seed: derive_seed(905, "ar-train", &[m as u64, noise_seed]),
                ..hp.clone()
            };
            let model = train_slp(&train, &run_hp).unwrap();
            let (acc, _) = evaluate(&model, &test).unwrap();
            accs.push(acc);
        }
        means.push(accs.iter().sum::<f64>() / accs.len() as f64);
    }

    let rho = spearman(&multipliers, &means);
    assert!(
        rho <= 0.0,
        "FAIL AR noise sweep: Spearman rho {rho:.3} > 0 for means {means:?}"
    );
    assert!(
        means[0] >= means[multipliers.len() - 1],
        "FAIL AR noise sweep: accuracy rose from {:.3} to {:.3}",
        means[0],
        means[multipliers.len() - 1]
    );
    println!(
        "PASS artificial reservoir: zero-noise CV 100%, noise sweep means {:?} with Spearman \
         rho {rho:.3} (<= 0) over 10 seeds",
        means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

// --- criterion: the 5 ms window wins the sweep ------------------------------

#[test]
fn five_ms_window_maximizes_accuracy_on_the_default_grid() {
    let (config, sessions, grid_time) = default_grid();
    let t0 = Instant::now();
    let hp = Hyperparams {
        epochs: config.sweep_epochs,
        ..config.classifier.clone()
    };
    let rows = window_sweep(
        sessions,
        config,
        &hp,
        derive_seed(906, "acceptance-sweep", &[]),
    )
    .unwrap();
    let elapsed = t0.elapsed() + *grid_time;

    assert_eq!(rows.first().unwrap().window_ms, 5.0);
    assert_eq!(rows.last().unwrap().window_ms, 50.0);
    let five = &rows[0];
    let fifty = rows.last().unwrap();
    assert!(
        five.mean_accuracy > fifty.mean_accuracy,
        "FAIL window trend: 5 ms mean {:.4} does not exceed 50 ms mean {:.4}",
        five.mean_accuracy,
        fifty.mean_accuracy
    );
    for row in &rows[1..] {
        assert!(
            row.mean_accuracy <= five.mean_accuracy + row.sem_accuracy,
            "FAIL window trend: {} ms mean {:.4} beats the 5 ms mean {:.4} by more than 1 SEM \
             ({:.4})",
            row.window_ms,
            row.mean_accuracy,
            five.mean_accuracy,
            row.sem_accuracy
        );
    }
    assert!(
        elapsed < Duration::from_secs(600),
        "FAIL window trend: {:.0} s exceeds the 10 min budget",
        elapsed.as_secs_f64()
    );
    println!(
        "PASS window trend: 5 ms mean {:.1}% > 50 ms mean {:.1}%, no window above 5 ms by > 1 SEM, \
         in {:.0} s (budget 600 s)",
        100.0 * five.mean_accuracy,
        100.0 * fifty.mean_accuracy,
        elapsed.as_secs_f64()
    );
}

// --- criterion: accuracy decays gracefully across days ----------------------

#[test]
fn day_one_training_degrades_gracefully_across_days() {
    let (config, sessions, _) = default_grid();
    let rows = cross_day_experiment(
        sessions,
        config,
        derive_seed(907, "acceptance-cross-day", &[]),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);

    for pair in rows.windows(2) {
        assert!(
            pair[0].mean_accuracy >= pair[1].mean_accuracy,
            "FAIL cross-day: day {} mean {:.4} rises above day {} mean {:.4}",
            pair[1].day,
            pair[1].mean_accuracy,
            pair[0].day,
            pair[0].mean_accuracy
        );
    }
    let band_top = rows
        .iter()
        .flat_map(|r| r.replicate_shuffled.iter())
        .fold(0.0f64, |a, &b| a.max(b));
    for row in &rows[1..] {
        assert!(
            row.mean_accuracy > band_top,
            "FAIL cross-day: day {} mean {:.4} is inside the shuffle band (top {:.4})",
            row.day,
            row.mean_accuracy,
            band_top
        );
    }
    println!(
        "PASS cross-day: accuracies {:?} non-increasing, days 2-3 above the shuffle band \
         (top {:.1}%)",
        rows.iter()
            .map(|r| (r.mean_accuracy * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>(),
        100.0 * band_top
    );
}

// --- criterion: classifier gradients are exact ------------------------------

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(derive_seed(908, "gradient", &[]));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n_features = rng.gen_range(4..12);
        let n_classes = rng.gen_range(2..6);
        let n_samples = rng.gen_range(3..8);
        let samples: Vec<(Vec<f64>, usize)> = (0..n_samples)
            .map(|_| {
                let x: Vec<f64> = (0..n_features).map(|_| rng.gen_range(-2.0..2.0)).collect();
                (x, rng.gen_range(0..n_classes))
            })
            .collect();
        let mut weights: Vec<f64> = (0..n_features * n_classes)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut bias: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (_, grad_w, grad_b) =
            batch_loss_and_grad(&weights, &bias, &samples, n_features, n_classes).unwrap();

        for i in 0..weights.len() {
            let analytic = grad_w[i];
            let original = weights[i];
            weights[i] = original + h;
            let (up, _, _) =
                batch_loss_and_grad(&weights, &bias, &samples, n_features, n_classes).unwrap();
            weights[i] = original - h;
            let (down, _, _) =
                batch_loss_and_grad(&weights, &bias, &samples, n_features, n_classes).unwrap();
            weights[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel <= 1e-5,
                "FAIL gradient check: case {case} weight {i} relative error {rel:.2e}"
            );
            worst = worst.max(rel);
        }
        for i in 0..bias.len() {
            let analytic = grad_b[i];
            let original = bias[i];
            bias[i] = original + h;
            let (up, _, _) =
                batch_loss_and_grad(&weights, &bias, &samples, n_features, n_classes).unwrap();
            bias[i] = original - h;
            let (down, _, _) =
                batch_loss_and_grad(&weights, &bias, &samples, n_features, n_classes).unwrap();
            bias[i] = original;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel <= 1e-5,
                "FAIL gradient check: case {case} bias {i} relative error {rel:.2e}"
            );
            worst = worst.max(rel);
        }
    }
    println!(
        "PASS gradient check: 20 random instances within 1e-5 relative error (worst {worst:.2e})"
    );
}

// --- criterion: cross-validation partitions exactly -------------------------

#[test]
fn cross_validation_folds_partition_and_stratify() {
    for seed in 0..10u64 {
        let mut labels: Vec<u8> = (0..200).map(|i| (i % NUM_CLASSES) as u8).collect();
        let mut rng = rng_from_seed(derive_seed(909, "cv-labels", &[seed]));
        use rand::seq::SliceRandom;
        labels.shuffle(&mut rng);

        let folds = stratified_folds(&labels, CV_FOLDS, seed).unwrap();
        assert_eq!(folds.len(), CV_FOLDS);

        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(
            seen,
            (0..200).collect::<Vec<_>>(),
            "FAIL CV partition: folds are not a disjoint exhaustive cover (seed {seed})"
        );
        for (f, fold) in folds.iter().enumerate() {
            let mut per_class = [0usize; NUM_CLASSES];
            for &i in fold {
                per_class[labels[i] as usize] += 1;
            }
            assert!(
                per_class.iter().all(|&c| c == 4),
                "FAIL CV partition: fold {f} class counts {per_class:?} are not all 4 (seed {seed})"
            );
        }
    }
    println!(
        "PASS CV partition: 10 seeds produce disjoint, exhaustive, stratified folds with exactly \
         4 per class per fold on 200 trials"
    );
}

// --- criterion: full default runs are byte-identical ------------------------

#[test]
fn full_default_runs_are_byte_identical() {
    use mea_reservoir_core::harness::run_full;
    use std::fs;
    use std::path::Path;

    fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                collect(root, &path, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }

    let t0 = Instant::now();
    let config = ExperimentConfig::default();
    let dir_a = tempfile::TempDir::new().unwrap();
    let dir_b = tempfile::TempDir::new().unwrap();
    let run_a = dir_a.path().join("run");
    let run_b = dir_b.path().join("run");
    run_full(&config, &run_a).unwrap();
    run_full(&config, &run_b).unwrap();

    let mut files_a = Vec::new();
    let mut files_b = Vec::new();
    collect(&run_a, &run_a, &mut files_a);
    collect(&run_b, &run_b, &mut files_b);
    files_a.sort();
    files_b.sort();
    assert_eq!(
        files_a, files_b,
        "FAIL reproducibility: the two runs wrote different file sets"
    );

    let mut n_csv = 0usize;
    for rel in &files_a {
        let a = fs::read(run_a.join(rel)).unwrap();
        let b = fs::read(run_b.join(rel)).unwrap();
        assert_eq!(a, b, "FAIL reproducibility: {rel} differs between runs");
        if rel.ends_with(".csv") {
            n_csv += 1;
        }
    }
    assert!(n_csv > 0);
    println!(
        "PASS reproducibility: two full default runs byte-identical across {} files \
         ({n_csv} CSV) in {:.0} s",
        files_a.len(),
        t0.elapsed().as_secs_f64()
    );
}
