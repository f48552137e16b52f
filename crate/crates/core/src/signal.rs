//! Extracellular signal model.
//!
//! Recordings live on a 64x64 electrode grid; channel `c` sits at grid row
//! `c / 64`, column `c % 64`. In memory a recording is a channel-major `f32`
//! buffer in microvolts; on disk it is a 16-bit quantized `.mear` file (see
//! [`write_mear`]). Synthetic traces are built by stamping a spike waveform
//! template onto known spike times and adding white Gaussian noise, which
//! gives detector tests an exact ground truth.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Side length of the electrode grid.
pub const GRID_SIDE: usize = 64;
/// Total number of electrodes on the grid.
pub const NUM_CHANNELS: usize = GRID_SIDE * GRID_SIDE;
/// Acquisition rate used throughout the workbench.
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 20_000;

const MEAR_MAGIC: &[u8; 4] = b"MEAR";
const MEAR_VERSION: u16 = 1;

/// Maps a flat channel index to `(row, column)` grid coordinates.
pub fn channel_to_grid(channel: usize) -> Result<(usize, usize)> {
    if channel >= NUM_CHANNELS {
        return Err(Error::range(format!(
            "channel {channel} outside grid of {NUM_CHANNELS}"
        )));
    }
    Ok((channel / GRID_SIDE, channel % GRID_SIDE))
}

/// Maps `(row, column)` grid coordinates to a flat channel index.
pub fn grid_to_channel(row: usize, col: usize) -> Result<usize> {
    if row >= GRID_SIDE || col >= GRID_SIDE {
        return Err(Error::range(format!(
            "grid position ({row}, {col}) outside {GRID_SIDE}x{GRID_SIDE}"
        )));
    }
    Ok(row * GRID_SIDE + col)
}

/// A multi-channel extracellular recording, channel-major, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: u32,
    /// Start time of sample 0 relative to the session clock, in seconds.
    t0_offset_s: f64,
    samples: Vec<f32>,
}

impl RawRecording {
    /// Creates an all-zero recording.
    pub fn zeroed(
        n_channels: usize,
        n_samples: usize,
        sample_rate_hz: u32,
        t0_offset_s: f64,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::invalid("recording needs at least one channel"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(RawRecording {
            n_channels,
            n_samples,
            sample_rate_hz,
            t0_offset_s,
            samples: vec![0.0; n_channels * n_samples],
        })
    }

    /// Wraps an existing channel-major buffer.
    pub fn from_samples(
        n_channels: usize,
        sample_rate_hz: u32,
        t0_offset_s: f64,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::invalid("recording needs at least one channel"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.len() % n_channels != 0 {
            return Err(Error::mismatch(format!(
                "buffer of {} samples does not divide into {} channels",
                samples.len(),
                n_channels
            )));
        }
        let n_samples = samples.len() / n_channels;
        Ok(RawRecording {
            n_channels,
            n_samples,
            sample_rate_hz,
            t0_offset_s,
            samples,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn t0_offset_s(&self) -> f64 {
        self.t0_offset_s
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz as f64
    }

    /// Immutable view of one channel's samples.
    pub fn channel(&self, channel: usize) -> Result<&[f32]> {
        if channel >= self.n_channels {
            return Err(Error::range(format!(
                "channel {channel} of {}",
                self.n_channels
            )));
        }
        let start = channel * self.n_samples;
        Ok(&self.samples[start..start + self.n_samples])
    }

    /// Mutable view of one channel's samples.
    pub fn channel_mut(&mut self, channel: usize) -> Result<&mut [f32]> {
        if channel >= self.n_channels {
            return Err(Error::range(format!(
                "channel {channel} of {}",
                self.n_channels
            )));
        }
        let start = channel * self.n_samples;
        Ok(&mut self.samples[start..start + self.n_samples])
    }
}

/// A spike waveform used when stamping synthetic spikes into a trace.
///
/// `peak_index` marks the sample of largest absolute amplitude; spike times
/// refer to that sample, so the waveform is placed with its peak on the spike
/// time.
#[derive(Debug, Clone)]
pub struct SpikeTemplate {
    pub id: u32,
    samples: Vec<f32>,
    peak_index: usize,
}

impl SpikeTemplate {
    /// The standard biphasic extracellular waveform: a 0.6 ms negative lobe of
    /// depth `amplitude_uv` followed by a 0.9 ms positive rebound at 30 % of
    /// that depth (1.5 ms total).
    pub fn biphasic(amplitude_uv: f32, sample_rate_hz: u32) -> Result<Self> {
        if !(amplitude_uv > 0.0) || !amplitude_uv.is_finite() {
            return Err(Error::invalid("template amplitude must be positive"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let fs = sample_rate_hz as f64;
        let neg_len = ((0.6e-3 * fs).round() as usize).max(1);
        let pos_len = ((0.9e-3 * fs).round() as usize).max(1);
        let mut samples = Vec::with_capacity(neg_len + pos_len);
        for k in 0..neg_len {
            let phase = std::f64::consts::PI * (k as f64 + 0.5) / neg_len as f64;
            samples.push(-(amplitude_uv as f64 * phase.sin()) as f32);
        }
        for k in 0..pos_len {
            let phase = std::f64::consts::PI * (k as f64 + 0.5) / pos_len as f64;
            samples.push((0.3 * amplitude_uv as f64 * phase.sin()) as f32);
        }
        Self::from_samples(1, samples)
    }

    /// Wraps an arbitrary waveform; the peak is located automatically.
    pub fn from_samples(id: u32, samples: Vec<f32>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("template must contain samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("template samples must be finite"));
        }
        let mut peak_index = 0;
        for (k, s) in samples.iter().enumerate() {
            if s.abs() > samples[peak_index].abs() {
                peak_index = k;
            }
        }
        Ok(SpikeTemplate {
            id,
            samples,
            peak_index,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn peak_index(&self) -> usize {
        self.peak_index
    }

    /// Largest absolute amplitude of the waveform.
    pub fn peak_amplitude(&self) -> f32 {
        self.samples[self.peak_index].abs()
    }
}

/// Ground truth attached to a synthetic recording: the spike times that were
/// injected, per channel, plus the template they were rendered with.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spike_samples: Vec<Vec<u64>>,
    pub template_id: u32,
}

impl GroundTruth {
    pub fn total_spikes(&self) -> usize {
        self.spike_samples.iter().map(Vec::len).sum()
    }
}

fn validate_spike_lists(spikes: &[Vec<u64>], n_samples: usize) -> Result<()> {
    for (channel, times) in spikes.iter().enumerate() {
        let mut prev: Option<u64> = None;
        for &t in times {
            if t >= n_samples as u64 {
                return Err(Error::range(format!(
                    "spike at sample {t} on channel {channel} beyond recording of {n_samples}"
                )));
            }
            if let Some(p) = prev {
                if t <= p {
                    return Err(Error::invalid(format!(
                        "spike times on channel {channel} must be strictly increasing"
                    )));
                }
            }
            prev = Some(t);
        }
    }
    Ok(())
}

/// Renders a synthetic recording by stamping `template` at every requested
/// spike time (additively, so overlapping spikes superpose) and adding white
/// Gaussian noise of standard deviation `noise_sd_uv`.
///
/// Spike times are per-channel sample indices of the waveform peak and must be
/// strictly increasing. Waveforms partially outside the recording are clipped.
pub fn synthesize_trace(
    spikes: &[Vec<u64>],
    n_samples: usize,
    sample_rate_hz: u32,
    t0_offset_s: f64,
    noise_sd_uv: f32,
    template: &SpikeTemplate,
    seed: u64,
) -> Result<(RawRecording, GroundTruth)> {
    if !(noise_sd_uv >= 0.0) || !noise_sd_uv.is_finite() {
        return Err(Error::invalid("noise standard deviation must be >= 0"));
    }
    validate_spike_lists(spikes, n_samples)?;
    let mut rec = RawRecording::zeroed(spikes.len().max(1), n_samples, sample_rate_hz, t0_offset_s)?;
    if spikes.is_empty() {
        return Err(Error::invalid("at least one channel is required"));
    }

    let mut rng = rng_from_seed(seed);
    let noise = if noise_sd_uv > 0.0 {
        Some(Normal::new(0.0f32, noise_sd_uv).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    for (channel, times) in spikes.iter().enumerate() {
        let buf = rec.channel_mut(channel)?;
        if let Some(dist) = &noise {
            for s in buf.iter_mut() {
                *s = dist.sample(&mut rng);
            }
        }
        for &t in times {
            stamp_template(buf, template, t);
        }
    }

    let truth = GroundTruth {
        spike_samples: spikes.to_vec(),
        template_id: template.id,
    };
    Ok((rec, truth))
}

fn stamp_template(buf: &mut [f32], template: &SpikeTemplate, peak_sample: u64) {
    let start = peak_sample as i64 - template.peak_index() as i64;
    for (k, &v) in template.samples().iter().enumerate() {
        let idx = start + k as i64;
        if idx >= 0 && (idx as usize) < buf.len() {
            buf[idx as usize] += v;
        }
    }
}

/// Draws `count` spike times uniformly in `[margin, n_samples - margin)` with
/// a minimum spacing, sorted ascending. Used by tests and diagnostics to build
/// ground-truth spike trains.
pub fn random_spike_times(
    count: usize,
    n_samples: usize,
    margin: usize,
    min_gap: usize,
    rng: &mut impl Rng,
) -> Vec<u64> {
    let lo = margin as u64;
    let hi = n_samples.saturating_sub(margin) as u64;
    if hi <= lo {
        return Vec::new();
    }
    let mut times: Vec<u64> = Vec::with_capacity(count);
    let mut attempts = 0;
    while times.len() < count && attempts < count * 50 {
        attempts += 1;
        let t = rng.gen_range(lo..hi);
        if times.iter().all(|&u| u.abs_diff(t) >= min_gap as u64) {
            times.push(t);
        }
    }
    times.sort_unstable();
    times
}

// --- .mear binary container -------------------------------------------------
//
// Layout (little endian):
//   magic            4 bytes  "MEAR"
//   version          u16      1
//   n_channels       u32
//   sample_rate_hz   u32
//   n_samples        u64
//   t0_offset_us     i64
//   scale_uv         f32      microvolts per quantization unit
//   samples          i16 * n_channels * n_samples, channel-major

/// Writes a recording as a `.mear` container, quantizing samples to 16 bits
/// at `scale_uv` microvolts per unit (values saturate at the i16 range).
pub fn write_mear<W: Write>(w: &mut W, rec: &RawRecording, scale_uv: f32) -> Result<()> {
    if !(scale_uv > 0.0) || !scale_uv.is_finite() {
        return Err(Error::invalid("scale must be positive and finite"));
    }
    w.write_all(MEAR_MAGIC)?;
    w.write_all(&MEAR_VERSION.to_le_bytes())?;
    w.write_all(&(rec.n_channels as u32).to_le_bytes())?;
    w.write_all(&rec.sample_rate_hz.to_le_bytes())?;
    w.write_all(&(rec.n_samples as u64).to_le_bytes())?;
    let t0_us = (rec.t0_offset_s * 1e6).round() as i64;
    w.write_all(&t0_us.to_le_bytes())?;
    w.write_all(&scale_uv.to_le_bytes())?;
    let mut buf = Vec::with_capacity(rec.samples.len() * 2);
    for &v in &rec.samples {
        let q = (v / scale_uv).round();
        let q = q.clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        buf.extend_from_slice(&q.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a `.mear` container. Returns the recording (samples rescaled to
/// microvolt `f32`) along with the stored quantization scale, so that a
/// rewrite at the same scale reproduces the file byte for byte.
pub fn read_mear<R: Read>(r: &mut R) -> Result<(RawRecording, f32)> {
    let mut header = [0u8; 34];
    r.read_exact(&mut header)
        .map_err(|_| Error::format("truncated header"))?;
    if &header[0..4] != MEAR_MAGIC {
        return Err(Error::format("bad magic, not a .mear file"));
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != MEAR_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let n_channels = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let sample_rate_hz = u32::from_le_bytes(header[10..14].try_into().unwrap());
    let n_samples = u64::from_le_bytes(header[14..22].try_into().unwrap());
    let t0_us = i64::from_le_bytes(header[22..30].try_into().unwrap());
    let scale_uv = f32::from_le_bytes(header[30..34].try_into().unwrap());
    if n_channels == 0 || sample_rate_hz == 0 {
        return Err(Error::format("zero channels or sample rate"));
    }
    if !(scale_uv > 0.0) || !scale_uv.is_finite() {
        return Err(Error::format("non-positive scale"));
    }
    let total = (n_channels as u64)
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::format("sample count overflows"))?;
    if total > (1 << 36) {
        return Err(Error::format("payload too large"));
    }
    let mut payload = vec![0u8; total as usize];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format("truncated payload"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("trailing bytes after payload"));
    }
    let mut samples = Vec::with_capacity((total / 2) as usize);
    for chunk in payload.chunks_exact(2) {
        let q = i16::from_le_bytes([chunk[0], chunk[1]]);
        samples.push(q as f32 * scale_uv);
    }
    let rec = RawRecording {
        n_channels,
        n_samples: n_samples as usize,
        sample_rate_hz,
        t0_offset_s: t0_us as f64 / 1e6,
        samples,
    };
    Ok((rec, scale_uv))
}

pub fn write_mear_file(path: &Path, rec: &RawRecording, scale_uv: f32) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mear(&mut w, rec, scale_uv)?;
    w.flush()?;
    Ok(())
}

pub fn read_mear_file(path: &Path) -> Result<(RawRecording, f32)> {
    let mut r = BufReader::new(File::open(path)?);
    read_mear(&mut r)
}
