//! Double-threshold spike detection.
//!
//! The detector works per channel in four steps:
//!
//! 1. Estimate the raw standard deviation `sigma` over the whole channel.
//! 2. Mark candidate peaks: samples whose absolute value exceeds
//!    `thr_low * sigma` and dominates a sliding window of `window_s` on each
//!    side (strictly greater than everything left of it in the window, at
//!    least as large as everything right of it, so a plateau yields its first
//!    sample).
//! 3. Re-estimate a cleaned `sigma_n` after excluding every `window_s`-long
//!    block that contains a low-threshold crossing, and keep only peaks above
//!    `thr_high * sigma_n`.
//! 4. Enforce a refractory spacing: candidates are accepted in order of
//!    decreasing amplitude (ties: earlier first) and dropped when they fall
//!    within `refractory_s` of an already accepted spike.
//!
//! [`detect_spikes`] is the production path (monotonic-deque sliding maxima,
//! O(n) per channel); [`detect_spikes_reference`] recomputes every window by
//! brute force. Both produce identical output on identical input, which the
//! test suite exploits.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{RawRecording, GRID_SIDE, NUM_CHANNELS};

/// Detector configuration. Thresholds are in units of the noise estimate.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Sliding-window length in seconds (peak dominance and noise exclusion).
    pub window_s: f64,
    /// Candidate threshold in raw-sigma units.
    pub thr_low: f64,
    /// Acceptance threshold in cleaned-sigma units.
    pub thr_high: f64,
    /// Minimum spacing between accepted spikes, in seconds.
    pub refractory_s: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            window_s: 2e-3,
            thr_low: 3.0,
            thr_high: 5.0,
            refractory_s: 1e-3,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) || !self.window_s.is_finite() {
            return Err(Error::invalid("window_s must be positive"));
        }
        if !(self.thr_low > 0.0) || !self.thr_low.is_finite() {
            return Err(Error::invalid("thr_low must be positive"));
        }
        if !self.thr_high.is_finite() || self.thr_high < self.thr_low {
            return Err(Error::invalid(format!(
                "thr_high ({}) must be >= thr_low ({})",
                self.thr_high, self.thr_low
            )));
        }
        if !(self.refractory_s >= 0.0) || !self.refractory_s.is_finite() {
            return Err(Error::invalid("refractory_s must be >= 0"));
        }
        Ok(())
    }

    fn window_samples(&self, sample_rate_hz: u32) -> usize {
        ((self.window_s * sample_rate_hz as f64).round() as usize).max(1)
    }

    fn refractory_samples(&self, sample_rate_hz: u32) -> u64 {
        (self.refractory_s * sample_rate_hz as f64).round() as u64
    }
}

/// Per-channel spike times (sample indices, strictly increasing) together
/// with the metadata of the recording they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    n_channels: usize,
    sample_rate_hz: u32,
    t0_offset_s: f64,
    n_samples: u64,
    spikes: Vec<Vec<u64>>,
}

impl SpikeTrain {
    pub fn from_parts(
        sample_rate_hz: u32,
        t0_offset_s: f64,
        n_samples: u64,
        spikes: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if spikes.is_empty() {
            return Err(Error::invalid("spike train needs at least one channel"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        for (channel, times) in spikes.iter().enumerate() {
            let mut prev: Option<u64> = None;
            for &t in times {
                if t >= n_samples {
                    return Err(Error::range(format!(
                        "spike at {t} on channel {channel} beyond {n_samples} samples"
                    )));
                }
                if let Some(p) = prev {
                    if t <= p {
                        return Err(Error::invalid(format!(
                            "channel {channel} spike times must be strictly increasing"
                        )));
                    }
                }
                prev = Some(t);
            }
        }
        Ok(SpikeTrain {
            n_channels: spikes.len(),
            sample_rate_hz,
            t0_offset_s,
            n_samples,
            spikes,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn t0_offset_s(&self) -> f64 {
        self.t0_offset_s
    }

    /// Number of samples in the source recording.
    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz as f64
    }

    pub fn channel(&self, channel: usize) -> Result<&[u64]> {
        self.spikes
            .get(channel)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::range(format!("channel {channel} of {}", self.n_channels)))
    }

    pub fn channels(&self) -> &[Vec<u64>] {
        &self.spikes
    }

    pub fn total_spikes(&self) -> usize {
        self.spikes.iter().map(Vec::len).sum()
    }

    /// Mean firing rate across all channels, in spikes per channel per second.
    pub fn mean_rate_hz(&self) -> f64 {
        let dur = self.duration_s();
        if dur == 0.0 {
            return 0.0;
        }
        self.total_spikes() as f64 / (self.n_channels as f64 * dur)
    }

    /// Session-clock time of a spike sample.
    pub fn sample_to_time_s(&self, sample: u64) -> f64 {
        self.t0_offset_s + sample as f64 / self.sample_rate_hz as f64
    }
}

/// Shared per-channel thresholds: (`raw sigma`, `cleaned sigma`).
///
/// Both detector implementations use this exact computation so that their
/// outputs can be compared bit for bit; everything downstream of the sigmas
/// (window maxima, dedup) is implemented twice and independently.
fn channel_sigmas(x: &[f32], lo_mult: f64, w: usize) -> Result<(f64, f64)> {
    let n = x.len();
    let mut sum = 0.0f64;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::NonFinite("recording contains non-finite samples".into()));
        }
        sum += v as f64;
    }
    let mean = sum / n as f64;
    let mut sq = 0.0f64;
    for &v in x {
        let d = v as f64 - mean;
        sq += d * d;
    }
    let sigma = (sq / n as f64).sqrt();
    if sigma == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lo = lo_mult * sigma;

    // Cleaned sigma over the blocks free of low-threshold crossings.
    let mut inc_count = 0usize;
    let mut inc_sum = 0.0f64;
    let mut start = 0usize;
    while start < n {
        let end = (start + w).min(n);
        if !x[start..end].iter().any(|v| (v.abs() as f64) > lo) {
            for &v in &x[start..end] {
                inc_sum += v as f64;
            }
            inc_count += end - start;
        }
        start = end;
    }
    let sigma_n = if inc_count == 0 {
        sigma
    } else {
        let inc_mean = inc_sum / inc_count as f64;
        let mut inc_sq = 0.0f64;
        let mut start = 0usize;
        while start < n {
            let end = (start + w).min(n);
            if !x[start..end].iter().any(|v| (v.abs() as f64) > lo) {
                for &v in &x[start..end] {
                    let d = v as f64 - inc_mean;
                    inc_sq += d * d;
                }
            }
            start = end;
        }
        (inc_sq / inc_count as f64).sqrt()
    };
    Ok((sigma, sigma_n))
}

/// Refractory dedup shared by both implementations: candidates ordered by
/// decreasing amplitude (ties broken toward earlier times) are accepted
/// unless within `refr` samples of an already accepted spike.
fn dedup_by_magnitude(mut candidates: Vec<(u64, f32)>, refr: u64) -> Vec<u64> {
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite amplitudes")
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut accepted: Vec<u64> = Vec::with_capacity(candidates.len());
    for (t, _) in candidates {
        let conflict = if refr == 0 {
            false
        } else {
            let ins = accepted.partition_point(|&u| u < t);
            (ins > 0 && t - accepted[ins - 1] < refr)
                || (ins < accepted.len() && accepted[ins] - t < refr)
        };
        if !conflict {
            let ins = accepted.partition_point(|&u| u < t);
            accepted.insert(ins, t);
        }
    }
    accepted
}

/// Production detector: O(n) per channel via monotonic-deque sliding maxima.
pub fn detect_spikes(rec: &RawRecording, params: &DetectorParams) -> Result<SpikeTrain> {
    params.validate()?;
    let w = params.window_samples(rec.sample_rate_hz());
    let h = w / 2;
    let refr = params.refractory_samples(rec.sample_rate_hz());

    let mut spikes = Vec::with_capacity(rec.n_channels());
    let mut abs = Vec::new();
    for c in 0..rec.n_channels() {
        let x = rec.channel(c)?;
        let n = x.len();
        if n == 0 {
            spikes.push(Vec::new());
            continue;
        }
        let (sigma, sigma_n) = channel_sigmas(x, params.thr_low, w)?;
        if sigma == 0.0 {
            spikes.push(Vec::new());
            continue;
        }
        let lo = params.thr_low * sigma;
        let hi = params.thr_high * sigma_n;

        abs.clear();
        abs.extend(x.iter().map(|v| v.abs()));

        // centered: max of |x| over [i-h, i+h]
        let mut centered: VecDeque<usize> = VecDeque::new();
        // trailing: max of |x| over [i-h, i-1]
        let mut trailing: VecDeque<usize> = VecDeque::new();
        for j in 0..h.min(n) {
            while centered.back().is_some_and(|&b| abs[b] < abs[j]) {
                centered.pop_back();
            }
            centered.push_back(j);
        }

        let mut candidates: Vec<(u64, f32)> = Vec::new();
        for i in 0..n {
            if i + h < n {
                let j = i + h;
                while centered.back().is_some_and(|&b| abs[b] < abs[j]) {
                    centered.pop_back();
                }
                centered.push_back(j);
            }
            while centered.front().is_some_and(|&f| f + h < i) {
                centered.pop_front();
            }
            while trailing.front().is_some_and(|&f| f + h < i) {
                trailing.pop_front();
            }

            let a = abs[i];
            let left_max = trailing.front().map(|&f| abs[f]);
            let dominant = a >= abs[*centered.front().expect("window holds i")]
                && left_max.map_or(true, |m| a > m);
            if dominant && (a as f64) > lo && (a as f64) > hi {
                candidates.push((i as u64, a));
            }

            while trailing.back().is_some_and(|&b| abs[b] < abs[i]) {
                trailing.pop_back();
            }
            trailing.push_back(i);
        }
        spikes.push(dedup_by_magnitude(candidates, refr));
    }

    SpikeTrain::from_parts(
        rec.sample_rate_hz(),
        rec.t0_offset_s(),
        rec.n_samples() as u64,
        spikes,
    )
}

/// Reference detector: identical definition, written in the most direct way
/// possible (every window maximum recomputed by scanning). Slow, but obviously
/// correct; used as the oracle for [`detect_spikes`].
pub fn detect_spikes_reference(rec: &RawRecording, params: &DetectorParams) -> Result<SpikeTrain> {
    params.validate()?;
    let w = params.window_samples(rec.sample_rate_hz());
    let h = w / 2;
    let refr = params.refractory_samples(rec.sample_rate_hz());

    let mut spikes = Vec::with_capacity(rec.n_channels());
    for c in 0..rec.n_channels() {
        let x = rec.channel(c)?;
        let n = x.len();
        if n == 0 {
            spikes.push(Vec::new());
            continue;
        }
        let (sigma, sigma_n) = channel_sigmas(x, params.thr_low, w)?;
        if sigma == 0.0 {
            spikes.push(Vec::new());
            continue;
        }
        let lo = params.thr_low * sigma;
        let hi = params.thr_high * sigma_n;

        let mut candidates: Vec<(u64, f32)> = Vec::new();
        for i in 0..n {
            let a = x[i].abs();
            if !((a as f64) > lo && (a as f64) > hi) {
                continue;
            }
            let left = i.saturating_sub(h);
            let right = (i + h).min(n - 1);
            let mut dominant = true;
            for j in left..i {
                if x[j].abs() >= a {
                    dominant = false;
                    break;
                }
            }
            if dominant {
                for j in (i + 1)..=right {
                    if x[j].abs() > a {
                        dominant = false;
                        break;
                    }
                }
            }
            if dominant {
                candidates.push((i as u64, a));
            }
        }

        // Same dedup definition, written naively.
        candidates.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite amplitudes")
                .then_with(|| a.0.cmp(&b.0))
        });
        let mut accepted: Vec<u64> = Vec::new();
        for (t, _) in candidates {
            if refr == 0 || accepted.iter().all(|&u| u.abs_diff(t) >= refr) {
                accepted.push(t);
            }
        }
        accepted.sort_unstable();
        spikes.push(accepted);
    }

    SpikeTrain::from_parts(
        rec.sample_rate_hz(),
        rec.t0_offset_s(),
        rec.n_samples() as u64,
        spikes,
    )
}

// --- spike CSV --------------------------------------------------------------

/// Writes `channel,i,j,sample_index,time_s` rows (RFC 4180, CRLF) sorted by
/// channel then sample index.
pub fn write_spikes_csv<W: Write>(w: &mut W, train: &SpikeTrain) -> Result<()> {
    if train.n_channels() > NUM_CHANNELS {
        return Err(Error::invalid(format!(
            "cannot map {} channels onto the {GRID_SIDE}x{GRID_SIDE} grid",
            train.n_channels()
        )));
    }
    w.write_all(b"channel,i,j,sample_index,time_s\r\n")?;
    for (c, times) in train.channels().iter().enumerate() {
        let (i, j) = (c / GRID_SIDE, c % GRID_SIDE);
        for &t in times {
            let line = format!("{c},{i},{j},{t},{:.6}\r\n", train.sample_to_time_s(t));
            w.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}

/// Reads a spike CSV written by [`write_spikes_csv`]. The recording metadata
/// is not stored in the CSV and must be supplied by the caller.
pub fn read_spikes_csv<R: Read>(
    r: &mut R,
    n_channels: usize,
    sample_rate_hz: u32,
    t0_offset_s: f64,
    n_samples: u64,
) -> Result<SpikeTrain> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .map(|l| l.trim_end_matches('\r'))
        .ok_or_else(|| Error::format("empty spike CSV"))?;
    if header != "channel,i,j,sample_index,time_s" {
        return Err(Error::format(format!("unexpected spike CSV header: {header}")));
    }
    let mut spikes = vec![Vec::new(); n_channels];
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |f: Option<&str>, what: &str| -> Result<u64> {
            f.and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::format(format!("line {}: bad {what}", lineno + 2)))
        };
        let channel = parse(fields.next(), "channel")? as usize;
        let _i = parse(fields.next(), "i")?;
        let _j = parse(fields.next(), "j")?;
        let sample = parse(fields.next(), "sample_index")?;
        if fields.next().is_none() {
            return Err(Error::format(format!("line {}: missing time_s", lineno + 2)));
        }
        if channel >= n_channels {
            return Err(Error::range(format!(
                "line {}: channel {channel} of {n_channels}",
                lineno + 2
            )));
        }
        spikes[channel].push(sample);
    }
    SpikeTrain::from_parts(sample_rate_hz, t0_offset_s, n_samples, spikes)
}

pub fn write_spikes_csv_file(path: &Path, train: &SpikeTrain) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spikes_csv(&mut w, train)?;
    w.flush()?;
    Ok(())
}

pub fn read_spikes_csv_file(
    path: &Path,
    n_channels: usize,
    sample_rate_hz: u32,
    t0_offset_s: f64,
    n_samples: u64,
) -> Result<SpikeTrain> {
    let mut r = BufReader::new(File::open(path)?);
    read_spikes_csv(&mut r, n_channels, sample_rate_hz, t0_offset_s, n_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_trace, RawRecording, SpikeTemplate};
    use rand::Rng;

    fn template() -> SpikeTemplate {
        SpikeTemplate::biphasic(1.0, 20_000).unwrap()
    }

    /// Noisy trace with spikes of `snr` times the noise floor.
    fn trace_with_spikes(spikes: Vec<Vec<u64>>, snr: f32, seed: u64) -> RawRecording {
        let noise = 4.0f32;
        let t = SpikeTemplate::biphasic(snr * noise, 20_000).unwrap();
        let n = 8000;
        synthesize_trace(&spikes, n, 20_000, 0.0, noise, &t, seed)
            .unwrap()
            .0
    }

    #[test]
    fn flat_and_pure_noise_channels_yield_nothing() {
        let rec = RawRecording::zeroed(3, 4000, 20_000, 0.0).unwrap();
        let out = detect_spikes(&rec, &DetectorParams::default()).unwrap();
        assert_eq!(out.total_spikes(), 0);

        let (noise_only, _) =
            synthesize_trace(&[vec![]], 40_000, 20_000, 0.0, 5.0, &template(), 42).unwrap();
        let out = detect_spikes(&noise_only, &DetectorParams::default()).unwrap();
        assert!(out.total_spikes() <= 1, "5-sigma crossings are rare in white noise");
    }

    #[test]
    fn constant_nonzero_channel_yields_nothing() {
        let mut rec = RawRecording::zeroed(1, 4000, 20_000, 0.0).unwrap();
        rec.channel_mut(0).unwrap().fill(3.5);
        let out = detect_spikes(&rec, &DetectorParams::default()).unwrap();
        assert_eq!(out.total_spikes(), 0);
    }

    #[test]
    fn single_clear_spike_is_found_at_the_right_sample() {
        let rec = trace_with_spikes(vec![vec![4000]], 10.0, 7);
        for detect in [detect_spikes, detect_spikes_reference] {
            let out = detect(&rec, &DetectorParams::default()).unwrap();
            let ch = out.channel(0).unwrap();
            assert_eq!(ch.len(), 1, "exactly one spike");
            assert!(ch[0].abs_diff(4000) <= 2, "peak within 2 samples, got {}", ch[0]);
        }
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut rec = RawRecording::zeroed(1, 100, 20_000, 0.0).unwrap();
        rec.channel_mut(0).unwrap()[3] = f32::NAN;
        assert!(matches!(
            detect_spikes(&rec, &DetectorParams::default()),
            Err(Error::NonFinite(_))
        ));
        assert!(detect_spikes_reference(&rec, &DetectorParams::default()).is_err());
    }

    #[test]
    fn inverted_thresholds_are_rejected() {
        let rec = RawRecording::zeroed(1, 100, 20_000, 0.0).unwrap();
        let params = DetectorParams {
            thr_low: 5.0,
            thr_high: 3.0,
            ..DetectorParams::default()
        };
        assert!(detect_spikes(&rec, &params).is_err());
    }

    #[test]
    fn refractory_keeps_the_larger_of_two_close_peaks() {
        // Two clear peaks 1.25 ms apart: far enough that each dominates its
        // own 1 ms half-window, close enough to collide under a 2 ms
        // refractory. The second peak is larger and must win.
        let n = 4000;
        let noise = 2.0f32;
        let t_small = SpikeTemplate::biphasic(14.0 * noise, 20_000).unwrap();
        let (mut rec, _) =
            synthesize_trace(&[vec![2000]], n, 20_000, 0.0, noise, &t_small, 5).unwrap();
        let t_big = SpikeTemplate::biphasic(20.0 * noise, 20_000).unwrap();
        let ch = rec.channel_mut(0).unwrap();
        let peak = t_big.peak_index();
        for (k, &v) in t_big.samples().iter().enumerate() {
            ch[2025 - peak + k] += v;
        }
        let long_refr = DetectorParams {
            refractory_s: 2e-3,
            ..DetectorParams::default()
        };
        let out = detect_spikes(&rec, &long_refr).unwrap();
        let got = out.channel(0).unwrap();
        assert_eq!(got.len(), 1, "refractory collapses the pair, got {got:?}");
        assert!(got[0].abs_diff(2025) <= 2, "larger peak wins, got {}", got[0]);

        let no_refr = DetectorParams {
            refractory_s: 0.0,
            ..DetectorParams::default()
        };
        let out = detect_spikes(&rec, &no_refr).unwrap();
        assert_eq!(out.channel(0).unwrap().len(), 2, "without refractory both remain");
    }

    #[test]
    fn power_of_two_rescaling_preserves_output() {
        let rec = trace_with_spikes(vec![vec![1000, 3000, 6000], vec![2000]], 9.0, 13);
        let base = detect_spikes(&rec, &DetectorParams::default()).unwrap();
        for k in [0.25f32, 0.5, 2.0, 4.0, 1024.0] {
            let mut scaled = rec.clone();
            for c in 0..scaled.n_channels() {
                for v in scaled.channel_mut(c).unwrap() {
                    *v *= k;
                }
            }
            let out = detect_spikes(&scaled, &DetectorParams::default()).unwrap();
            assert_eq!(out.channels(), base.channels(), "scale {k}");
        }
    }

    #[test]
    fn raising_thr_high_never_adds_spikes() {
        let rec = trace_with_spikes(vec![vec![900, 2500, 4100, 7000], vec![1500, 5000]], 6.0, 21);
        let mut prev: Option<SpikeTrain> = None;
        for thr_high in [4.0, 5.0, 6.0, 8.0] {
            let params = DetectorParams {
                thr_high,
                ..DetectorParams::default()
            };
            let out = detect_spikes(&rec, &params).unwrap();
            if let Some(p) = &prev {
                for c in 0..out.n_channels() {
                    let cur = out.channel(c).unwrap();
                    let before = p.channel(c).unwrap();
                    assert!(
                        cur.iter().all(|t| before.contains(t)),
                        "thr_high {thr_high}: new spike appeared"
                    );
                }
            }
            prev = Some(out);
        }
    }

    #[test]
    fn fast_path_matches_reference_on_random_traces() {
        let mut rng = crate::seed::rng_from_seed(99);
        for case in 0..10 {
            let n_channels = rng.gen_range(1..4);
            let mut spikes = Vec::new();
            for _ in 0..n_channels {
                let count = rng.gen_range(0..8);
                spikes.push(crate::signal::random_spike_times(count, 6000, 50, 30, &mut rng));
            }
            let snr = rng.gen_range(2.0..12.0);
            let rec = trace_with_spikes(spikes, snr, 1000 + case);
            for params in [
                DetectorParams::default(),
                DetectorParams {
                    window_s: 1e-3,
                    thr_low: 2.5,
                    thr_high: 4.0,
                    refractory_s: 0.5e-3,
                },
                DetectorParams {
                    refractory_s: 0.0,
                    ..DetectorParams::default()
                },
            ] {
                let fast = detect_spikes(&rec, &params).unwrap();
                let slow = detect_spikes_reference(&rec, &params).unwrap();
                assert_eq!(fast, slow, "case {case}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let rec = trace_with_spikes(vec![vec![1000, 3000], vec![], vec![500]], 10.0, 31);
        let train = detect_spikes(&rec, &DetectorParams::default()).unwrap();
        let mut bytes = Vec::new();
        write_spikes_csv(&mut bytes, &train).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("channel,i,j,sample_index,time_s\r\n"));
        let back = read_spikes_csv(
            &mut bytes.as_slice(),
            train.n_channels(),
            train.sample_rate_hz(),
            train.t0_offset_s(),
            train.n_samples(),
        )
        .unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn csv_rejects_bad_header_and_fields() {
        let bad = b"chan,i,j,sample,a\r\n".to_vec();
        assert!(read_spikes_csv(&mut bad.as_slice(), 4, 20_000, 0.0, 100).is_err());
        let bad = b"channel,i,j,sample_index,time_s\r\n9,0,9,5,0.1\r\n".to_vec();
        assert!(read_spikes_csv(&mut bad.as_slice(), 4, 20_000, 0.0, 100).is_err());
        let bad = b"channel,i,j,sample_index,time_s\r\n0,0,0,xx,0.1\r\n".to_vec();
        assert!(read_spikes_csv(&mut bad.as_slice(), 4, 20_000, 0.0, 100).is_err());
    }
}
