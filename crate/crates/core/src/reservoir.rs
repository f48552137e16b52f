//! Artificial reservoir baseline: an echo-state network the same size as the
//! electrode grid, driven by the same stimulus maps plus noise calibrated from
//! spontaneous activity, and read out through the same channel mask.
//!
//! The recurrent weight matrix is sparse (10% of entries nonzero, values
//! uniform in [-1, 1]) and rescaled so its spectral radius hits a configured
//! target. A forward pass starts from the all-zero resting state, applies the
//! input map once, then lets the network evolve for one extra step:
//!
//!   x1 = tanh(gain * (u + xi)),  x2 = tanh(R * x1)
//!
//! where `u` holds the stimulation amplitude at stimulated channels and `xi`
//! is per-channel Poisson noise with means taken from a [`NoiseCalibration`].
//! The masked `x2` becomes the feature vector, so downstream training code
//! cannot tell the two reservoirs apart.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::detect::SpikeTrain;
use crate::error::{Error, Result};
use crate::readout::{ChannelMask, FeatureVector};
use crate::seed::{derive_seed, rng_from_seed};
use crate::signal::NUM_CHANNELS;
use crate::stim::StimulusPattern;

/// Construction parameters for the artificial reservoir.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ARParams {
    /// Fraction of recurrent weights that are nonzero.
    pub density: f64,
    /// Target spectral radius of the scaled recurrent matrix.
    pub spectral_radius: f64,
    /// Scalar gain applied to the noisy input before the first nonlinearity.
    pub input_gain: f64,
    pub seed: u64,
}

impl Default for ARParams {
    fn default() -> Self {
        ARParams {
            density: 0.10,
            spectral_radius: 0.9,
            input_gain: 1.0,
            seed: 0,
        }
    }
}

impl ARParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid("density must lie in (0, 1]"));
        }
        if !(self.spectral_radius > 0.0) || !self.spectral_radius.is_finite() {
            return Err(Error::invalid("spectral_radius must be positive"));
        }
        if !(self.input_gain > 0.0) || !self.input_gain.is_finite() {
            return Err(Error::invalid("input_gain must be positive"));
        }
        Ok(())
    }
}

/// Row-major sparse matrix over the channel space.
#[derive(Debug, Clone, PartialEq)]
struct SparseMatrix {
    n: usize,
    offsets: Vec<u32>,
    cols: Vec<u16>,
    vals: Vec<f32>,
}

impl SparseMatrix {
    fn random(n: usize, density: f64, rng: &mut impl Rng) -> SparseMatrix {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0u32);
        for _ in 0..n {
            for j in 0..n {
                if rng.gen_bool(density) {
                    cols.push(j as u16);
                    vals.push(rng.gen_range(-1.0f32..=1.0));
                }
            }
            offsets.push(cols.len() as u32);
        }
        SparseMatrix {
            n,
            offsets,
            cols,
            vals,
        }
    }

    fn density(&self) -> f64 {
        self.vals.len() as f64 / (self.n * self.n) as f64
    }

    fn scale(&mut self, factor: f32) {
        for v in self.vals.iter_mut() {
            *v *= factor;
        }
    }

    fn mul_into(&self, x: &[f32], y: &mut [f32]) {
        for i in 0..self.n {
            let a = self.offsets[i] as usize;
            let b = self.offsets[i + 1] as usize;
            let mut acc = 0.0f32;
            for k in a..b {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = acc;
        }
    }
}

/// Estimates the spectral radius as the geometric-mean growth rate of a long
/// renormalized power iteration. A complex dominant pair makes single-step
/// ratios oscillate, but the growth rate averaged over the window still
/// converges to the dominant modulus.
fn estimate_spectral_radius(m: &SparseMatrix, seed: u64, warmup: usize, window: usize) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut x: Vec<f32> = (0..m.n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    let mut y = vec![0.0f32; m.n];
    let normalize = |v: &mut Vec<f32>| -> f64 {
        let norm = v.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            let inv = (1.0 / norm) as f32;
            for a in v.iter_mut() {
                *a *= inv;
            }
        }
        norm
    };
    normalize(&mut x);
    for _ in 0..warmup {
        m.mul_into(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
        normalize(&mut x);
    }
    let mut log_growth = 0.0f64;
    for _ in 0..window {
        m.mul_into(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
        log_growth += normalize(&mut x).ln();
    }
    (log_growth / window as f64).exp()
}

/// The artificial reservoir: immutable once built, forward passes are pure
/// given their seeds.
#[derive(Debug, Clone)]
pub struct ARModel {
    params: ARParams,
    weights: SparseMatrix,
    raw_radius: f64,
}

impl ARModel {
    pub fn build(params: ARParams) -> Result<ARModel> {
        params.validate()?;
        let mut rng = rng_from_seed(derive_seed(params.seed, "ar-weights", &[]));
        let weights = SparseMatrix::random(NUM_CHANNELS, params.density, &mut rng);
        let density = weights.density();
        let tol = 0.05 * params.density;
        if (density - params.density).abs() > tol {
            return Err(Error::range(format!(
                "realized weight density {density:.4} strays more than 5% from {}",
                params.density
            )));
        }
        let mut weights = weights;
        let raw_radius = estimate_spectral_radius(
            &weights,
            derive_seed(params.seed, "ar-spectral-start", &[]),
            600,
            1200,
        );
        if !(raw_radius > 0.0) || !raw_radius.is_finite() {
            return Err(Error::NonFinite(
                "spectral radius estimate did not converge".into(),
            ));
        }
        weights.scale((params.spectral_radius / raw_radius) as f32);
        Ok(ARModel {
            params,
            weights,
            raw_radius,
        })
    }

    pub fn params(&self) -> &ARParams {
        &self.params
    }

    /// Density actually realized by the random draw.
    pub fn density(&self) -> f64 {
        self.weights.density()
    }

    /// Spectral radius of the unscaled random matrix, as estimated at build
    /// time. The scaled matrix has radius `params.spectral_radius` up to the
    /// estimator's accuracy.
    pub fn raw_spectral_radius(&self) -> f64 {
        self.raw_radius
    }

    /// Re-estimates the spectral radius of the scaled matrix from a fresh
    /// probe vector; a self-consistency check.
    pub fn measure_spectral_radius(&self, probe_seed: u64) -> f64 {
        estimate_spectral_radius(&self.weights, probe_seed, 600, 1200)
    }

    /// Raw stimulation intensity map: pulse amplitude at every stimulated
    /// channel, zero elsewhere.
    pub fn input_map(pattern: &StimulusPattern) -> Vec<f32> {
        let mut u = vec![0.0f32; NUM_CHANNELS];
        let amp = pattern.pulse.amplitude_ua as f32;
        for &c in &pattern.stimulated_channels() {
            u[c as usize] = amp;
        }
        u
    }

    /// Two-step forward pass from the resting state, without noise or masking.
    fn forward_state(&self, u: &[f32]) -> Result<Vec<f32>> {
        let gain = self.params.input_gain as f32;
        let x1: Vec<f32> = u.iter().map(|&v| (gain * v).tanh()).collect();
        let mut x2 = vec![0.0f32; NUM_CHANNELS];
        self.weights.mul_into(&x1, &mut x2);
        for v in x2.iter_mut() {
            *v = v.tanh();
            if !v.is_finite() {
                return Err(Error::NonFinite("reservoir state diverged".into()));
            }
        }
        Ok(x2)
    }
}

/// Per-channel mean spontaneous spike count over windows of a fixed length,
/// estimated from a fixed number of non-overlapping windows.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCalibration {
    means: Vec<f64>,
    window_s: f64,
    n_windows: usize,
}

impl NoiseCalibration {
    /// A calibration that injects nothing.
    pub fn silent(window_s: f64) -> NoiseCalibration {
        NoiseCalibration {
            means: vec![0.0; NUM_CHANNELS],
            window_s,
            n_windows: 0,
        }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn mean_over_channels(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }
}

/// Draws `count` ordered non-overlapping window onsets of length `len` from
/// `[0, span)`. Sorting uniform draws over the slack and spreading them by
/// one window length each makes every non-overlapping configuration equally
/// likely.
fn draw_nonoverlapping_onsets(
    span: u64,
    count: usize,
    len: u64,
    rng: &mut impl Rng,
) -> Result<Vec<u64>> {
    let needed = len
        .checked_mul(count as u64)
        .ok_or_else(|| Error::range("window span overflows"))?;
    if needed > span {
        return Err(Error::range(format!(
            "recording of {span} samples cannot hold {count} disjoint windows of {len}"
        )));
    }
    let slack = span - needed;
    let mut onsets: Vec<u64> = (0..count).map(|_| rng.gen_range(0..=slack)).collect();
    onsets.sort_unstable();
    for (i, o) in onsets.iter_mut().enumerate() {
        *o += i as u64 * len;
    }
    Ok(onsets)
}

/// Estimates per-channel mean spontaneous counts from `n_windows` randomly
/// placed non-overlapping windows of `window_s` seconds.
pub fn calibrate_noise(
    spont: &SpikeTrain,
    window_s: f64,
    n_windows: usize,
    seed: u64,
) -> Result<NoiseCalibration> {
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(Error::invalid("window_s must be positive"));
    }
    if n_windows == 0 {
        return Err(Error::invalid("n_windows must be positive"));
    }
    let w = (window_s * spont.sample_rate_hz() as f64).round() as u64;
    let len = w + 1;
    let mut rng = rng_from_seed(seed);
    let onsets = draw_nonoverlapping_onsets(spont.n_samples(), n_windows, len, &mut rng)?;
    let mut means = vec![0.0f64; spont.n_channels()];
    for (c, mean) in means.iter_mut().enumerate() {
        let times = spont.channel(c)?;
        let mut total = 0usize;
        for &onset in &onsets {
            let lo = times.partition_point(|&t| t < onset);
            let hi = times.partition_point(|&t| t <= onset + w);
            total += hi - lo;
        }
        *mean = total as f64 / n_windows as f64;
    }
    Ok(NoiseCalibration {
        means,
        window_s,
        n_windows,
    })
}

/// Runs one stimulus through the artificial reservoir and returns the masked
/// feature vector. `noise_multiplier` scales every calibrated mean before the
/// Poisson draw; zero disables noise entirely.
#[allow(clippy::too_many_arguments)]
pub fn ar_forward(
    model: &ARModel,
    pattern: &StimulusPattern,
    noise: &NoiseCalibration,
    noise_multiplier: f64,
    mask_half_width: usize,
    session: &str,
    trial: usize,
    seed: u64,
) -> Result<FeatureVector> {
    if !(noise_multiplier >= 0.0) || !noise_multiplier.is_finite() {
        return Err(Error::invalid("noise_multiplier must be >= 0"));
    }
    let mut u = ARModel::input_map(pattern);
    if noise_multiplier > 0.0 {
        let mut rng = rng_from_seed(derive_seed(seed, "ar-noise", &[trial as u64]));
        for (v, &mean) in u.iter_mut().zip(noise.means.iter()) {
            let lambda = mean * noise_multiplier;
            if lambda > 0.0 {
                let draw = Poisson::new(lambda)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng);
                *v += draw as f32;
            }
        }
    }
    let state = model.forward_state(&u)?;
    let mask = ChannelMask::for_pattern(pattern, mask_half_width)?;
    let values: Vec<f64> = state
        .iter()
        .enumerate()
        .map(|(c, &v)| if mask.is_masked(c) { 0.0 } else { v as f64 })
        .collect();
    FeatureVector::new(
        values,
        pattern.label,
        session.to_string(),
        trial,
        0,
        noise.window_s,
        mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stim::{build_pattern, GlyphLayout, PulseParams};

    fn small_random(n: usize, density: f64, seed: u64) -> SparseMatrix {
        let mut rng = rng_from_seed(seed);
        SparseMatrix::random(n, density, &mut rng)
    }

    #[test]
    fn parameters_are_validated() {
        for bad in [
            ARParams {
                density: 0.0,
                ..ARParams::default()
            },
            ARParams {
                density: 1.5,
                ..ARParams::default()
            },
            ARParams {
                spectral_radius: 0.0,
                ..ARParams::default()
            },
            ARParams {
                input_gain: f64::NAN,
                ..ARParams::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(ARParams::default().validate().is_ok());
    }

    #[test]
    fn spectral_estimate_matches_dense_eigenvalues() {
        use nalgebra::DMatrix;
        for seed in [3u64, 11, 42] {
            let m = small_random(96, 0.1, seed);
            let mut dense = DMatrix::<f64>::zeros(96, 96);
            for i in 0..96 {
                for k in m.offsets[i] as usize..m.offsets[i + 1] as usize {
                    dense[(i, m.cols[k] as usize)] = m.vals[k] as f64;
                }
            }
            let oracle = dense
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0f64, f64::max);
            let est = estimate_spectral_radius(&m, 99, 3000, 6000);
            assert!(
                (est - oracle).abs() <= 0.01 * oracle,
                "seed {seed}: estimate {est} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn build_hits_density_and_radius_targets() {
        let model = ARModel::build(ARParams {
            seed: 5,
            ..ARParams::default()
        })
        .unwrap();
        assert!((0.095..=0.105).contains(&model.density()), "{}", model.density());
        let measured = model.measure_spectral_radius(1234);
        assert!(
            (measured - 0.9).abs() <= 0.009,
            "scaled radius measured at {measured}"
        );
    }

    #[test]
    fn build_is_deterministic_in_the_seed() {
        let a = ARModel::build(ARParams {
            seed: 21,
            ..ARParams::default()
        })
        .unwrap();
        let b = ARModel::build(ARParams {
            seed: 21,
            ..ARParams::default()
        })
        .unwrap();
        assert_eq!(a.weights, b.weights);
        let c = ARModel::build(ARParams {
            seed: 22,
            ..ARParams::default()
        })
        .unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn onset_drawing_is_sound() {
        let mut rng = rng_from_seed(8);
        let onsets = draw_nonoverlapping_onsets(10_000, 50, 101, &mut rng).unwrap();
        assert_eq!(onsets.len(), 50);
        for pair in onsets.windows(2) {
            assert!(pair[1] >= pair[0] + 101, "windows overlap: {pair:?}");
        }
        assert!(*onsets.last().unwrap() + 101 <= 10_000);

        let mut rng2 = rng_from_seed(8);
        let again = draw_nonoverlapping_onsets(10_000, 50, 101, &mut rng2).unwrap();
        assert_eq!(onsets, again);

        let mut rng3 = rng_from_seed(8);
        assert!(draw_nonoverlapping_onsets(5_000, 50, 101, &mut rng3).is_err());
    }

    #[test]
    fn silent_recording_calibrates_to_zero() {
        let train = SpikeTrain::from_parts(
            20_000,
            0.0,
            200_000,
            vec![Vec::new(); NUM_CHANNELS],
        )
        .unwrap();
        let cal = calibrate_noise(&train, 0.005, 100, 3).unwrap();
        assert!(cal.means().iter().all(|&m| m == 0.0));
        assert_eq!(cal.n_windows(), 100);
    }

    #[test]
    fn poisson_activity_calibrates_near_the_analytic_mean() {
        use rand_distr::Exp;
        let fs = 20_000u32;
        let n_samples = 600_000u64;
        let rate = 20.0f64;
        let mut rng = rng_from_seed(17);
        let exp = Exp::new(rate).unwrap();
        let spikes: Vec<Vec<u64>> = (0..NUM_CHANNELS)
            .map(|_| {
                let mut t = 0.0f64;
                let mut ch = Vec::new();
                loop {
                    t += exp.sample(&mut rng);
                    let s = (t * fs as f64).round() as u64;
                    if s >= n_samples {
                        break ch;
                    }
                    if ch.last() != Some(&s) {
                        ch.push(s);
                    }
                }
            })
            .collect();
        let train = SpikeTrain::from_parts(fs, 0.0, n_samples, spikes).unwrap();
        let window_s = 0.05;
        let cal = calibrate_noise(&train, window_s, 100, 9).unwrap();
        let expected = rate * window_s;
        let se_channel = (expected / 100.0).sqrt();
        let grand = cal.mean_over_channels();
        let se_grand = se_channel / (NUM_CHANNELS as f64).sqrt();
        assert!(
            (grand - expected).abs() <= 3.0 * se_grand,
            "grand mean {grand} vs {expected} (se {se_grand})"
        );
        for (c, &m) in cal.means().iter().enumerate() {
            assert!(
                (m - expected).abs() <= 5.0 * se_channel,
                "channel {c} mean {m} strays from {expected}"
            );
        }
    }

    #[test]
    fn same_seed_same_calibration() {
        let mut rng = rng_from_seed(31);
        let spikes: Vec<Vec<u64>> = (0..NUM_CHANNELS)
            .map(|_| {
                (0..20)
                    .map(|_| rng.gen_range(0..400_000u64))
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        let train = SpikeTrain::from_parts(20_000, 0.0, 400_000, spikes).unwrap();
        let a = calibrate_noise(&train, 0.005, 100, 77).unwrap();
        let b = calibrate_noise(&train, 0.005, 100, 77).unwrap();
        assert_eq!(a, b);
        let c = calibrate_noise(&train, 0.005, 100, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn resting_state_is_a_fixed_point() {
        let model = ARModel::build(ARParams {
            seed: 5,
            ..ARParams::default()
        })
        .unwrap();
        let out = model.forward_state(&vec![0.0; NUM_CHANNELS]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_odd_in_the_input() {
        let model = ARModel::build(ARParams {
            seed: 5,
            ..ARParams::default()
        })
        .unwrap();
        let mut rng = rng_from_seed(44);
        let u: Vec<f32> = (0..NUM_CHANNELS)
            .map(|_| rng.gen_range(-2.0f32..=2.0))
            .collect();
        let neg: Vec<f32> = u.iter().map(|&v| -v).collect();
        let a = model.forward_state(&u).unwrap();
        let b = model.forward_state(&neg).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn forward_masks_and_reproduces() {
        let model = ARModel::build(ARParams {
            seed: 5,
            ..ARParams::default()
        })
        .unwrap();
        let pattern = build_pattern(4, &GlyphLayout::default(), &PulseParams::default()).unwrap();
        let cal = NoiseCalibration {
            means: vec![0.02; NUM_CHANNELS],
            window_s: 0.005,
            n_windows: 100,
        };
        let a = ar_forward(&model, &pattern, &cal, 1.0, 2, "ar", 0, 900).unwrap();
        let b = ar_forward(&model, &pattern, &cal, 1.0, 2, "ar", 0, 900).unwrap();
        assert_eq!(a.values(), b.values());
        let c = ar_forward(&model, &pattern, &cal, 1.0, 2, "ar", 0, 901).unwrap();
        assert_ne!(a.values(), c.values());

        let mask = ChannelMask::for_pattern(&pattern, 2).unwrap();
        for ch in 0..NUM_CHANNELS {
            assert_eq!(a.mask.is_masked(ch), mask.is_masked(ch));
            if mask.is_masked(ch) {
                assert_eq!(a.values()[ch], 0.0);
            }
        }
        assert_eq!(a.label, 4);

        let noiseless = ar_forward(&model, &pattern, &cal, 0.0, 2, "ar", 0, 900).unwrap();
        let noiseless2 = ar_forward(&model, &pattern, &cal, 0.0, 2, "ar", 1, 12345).unwrap();
        assert_eq!(noiseless.values(), noiseless2.values());
        assert_ne!(noiseless.values(), a.values());
    }
}
