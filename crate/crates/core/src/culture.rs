//! Simulated spiking culture on the electrode grid.
//!
//! One leaky integrate-and-fire neuron sits on every electrode. Synapses are
//! drawn from distance-dependent Gaussian kernels (local excitation, broader
//! inhibition, roughly an 80/20 split) with conduction delays that grow with
//! distance. Between synaptic events a membrane decays exponentially, so the
//! engine only touches a neuron when something arrives: spike deliveries from
//! a short ring buffer, Poisson background kicks that keep the culture
//! spontaneously active, and stimulation current during pulse phases.
//!
//! Two properties matter downstream and are worth stating up front. First,
//! stimulation couples only into the 3x3 electrode patch around each driven
//! electrode, while synaptic kernels reach several electrodes further; the
//! evoked wave therefore propagates well beyond the masked stimulation site.
//! Second, every trial draws a global excitability factor (a slowly wandering
//! culture state), so repeated presentations of the same digit produce
//! responses that vary in overall strength but keep their spatial layout.
//!
//! Day-to-day drift rewires a fraction of synapses and jitters the remaining
//! weights, modelling the slow reorganization of a living culture between
//! recording sessions.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use sha2::{Digest, Sha256};

use crate::detect::SpikeTrain;
use crate::error::{Error, Result};
use crate::seed::{bytes_to_hex, derive_seed, rng_from_seed};
use crate::signal::{channel_to_grid, RawRecording, SpikeTemplate, GRID_SIDE, NUM_CHANNELS};
use crate::stim::StimulusPattern;

/// Leaky integrate-and-fire membrane constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembraneParams {
    pub tau_ms: f64,
    pub threshold: f64,
    pub reset: f64,
    pub refractory_ms: f64,
}

impl Default for MembraneParams {
    fn default() -> Self {
        MembraneParams {
            tau_ms: 15.0,
            threshold: 1.0,
            reset: 0.0,
            refractory_ms: 3.0,
        }
    }
}

/// Day-to-day plasticity between sessions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    /// Fraction of synapses that migrate to a newly drawn target per day.
    pub rewire_fraction: f64,
    /// Standard deviation of the additive weight perturbation per day.
    pub weight_jitter_sd: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            rewire_fraction: 0.05,
            weight_jitter_sd: 0.02,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rewire_fraction) {
            return Err(Error::invalid("rewire_fraction must lie in [0, 1]"));
        }
        if !(self.weight_jitter_sd >= 0.0) || !self.weight_jitter_sd.is_finite() {
            return Err(Error::invalid("weight_jitter_sd must be >= 0"));
        }
        Ok(())
    }
}

/// Full culture configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CultureParams {
    pub membrane: MembraneParams,
    /// Per-neuron Poisson kick rate sustaining spontaneous activity, Hz.
    pub background_rate_hz: f64,
    /// Membrane deflection per background kick.
    pub background_weight: f64,
    /// Gaussian kernel width (grid units) for excitatory targets.
    pub connect_sigma: f64,
    /// Peak connection probability of the excitatory kernel.
    pub connect_peak: f64,
    pub inhibitory_fraction: f64,
    pub inhibitory_sigma: f64,
    pub inhibitory_peak: f64,
    /// Base excitatory weight; each synapse scales it by U(0.5, 1.5).
    pub weight_exc: f64,
    /// Inhibitory weights are `-inhibition_ratio * weight_exc` before jitter.
    pub inhibition_ratio: f64,
    /// Hard cap on |weight| after drift.
    pub weight_clamp: f64,
    pub delay_base_ms: f64,
    pub delay_per_unit_ms: f64,
    pub delay_jitter_ms: f64,
    /// Additional delay on inhibitory synapses: slower receptor kinetics and
    /// polysynaptic recruitment make inhibition lag the excitatory wave.
    pub inhibitory_delay_extra_ms: f64,
    /// Membrane units injected per microamp-millisecond of pulse current.
    pub coupling_gain: f64,
    /// Coupling factor for the 8 electrodes surrounding a driven one.
    pub coupling_neighbor_factor: f64,
    /// Fraction of a neuron's synaptic resource consumed per spike
    /// (short-term depression); 0 disables depression.
    pub depression_use: f64,
    /// Recovery time constant of the synaptic resource, milliseconds.
    pub depression_tau_ms: f64,
    /// Log-normal sigma of the per-trial background-excitability factor.
    pub excitability_sd: f64,
    /// Log-normal sigma of the per-trial stimulus-efficacy factor: the same
    /// pattern evokes responses of varying overall strength across trials.
    pub stimulus_gain_sd: f64,
    /// Initial membrane potentials are drawn from U(0, this).
    pub init_potential_max: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for CultureParams {
    fn default() -> Self {
        CultureParams {
            membrane: MembraneParams::default(),
            background_rate_hz: 55.0,
            background_weight: 0.32,
            connect_sigma: 4.0,
            connect_peak: 0.50,
            inhibitory_fraction: 0.2,
            inhibitory_sigma: 6.0,
            inhibitory_peak: 0.28,
            weight_exc: 0.14,
            inhibition_ratio: 3.5,
            weight_clamp: 2.0,
            delay_base_ms: 0.5,
            delay_per_unit_ms: 0.15,
            delay_jitter_ms: 0.3,
            inhibitory_delay_extra_ms: 1.5,
            coupling_gain: 6.0,
            coupling_neighbor_factor: 0.5,
            depression_use: 0.35,
            depression_tau_ms: 400.0,
            excitability_sd: 0.12,
            stimulus_gain_sd: 0.30,
            init_potential_max: 0.5,
            sample_rate_hz: crate::signal::DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
        }
    }
}

impl CultureParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{what} must be positive")));
            }
            Ok(())
        };
        pos(self.membrane.tau_ms, "tau_ms")?;
        pos(self.membrane.refractory_ms, "refractory_ms")?;
        pos(self.membrane.threshold - self.membrane.reset, "threshold - reset")?;
        if !(self.background_rate_hz >= 0.0) {
            return Err(Error::invalid("background_rate_hz must be >= 0"));
        }
        pos(self.connect_sigma, "connect_sigma")?;
        pos(self.inhibitory_sigma, "inhibitory_sigma")?;
        for (p, what) in [
            (self.connect_peak, "connect_peak"),
            (self.inhibitory_peak, "inhibitory_peak"),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("{what} must lie in (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.inhibitory_fraction) {
            return Err(Error::invalid("inhibitory_fraction must lie in [0, 1]"));
        }
        pos(self.weight_exc, "weight_exc")?;
        pos(self.inhibition_ratio, "inhibition_ratio")?;
        pos(self.weight_clamp, "weight_clamp")?;
        if self.delay_base_ms < 0.0
            || self.delay_per_unit_ms < 0.0
            || self.delay_jitter_ms < 0.0
            || self.inhibitory_delay_extra_ms < 0.0
        {
            return Err(Error::invalid("delays must be >= 0"));
        }
        pos(self.coupling_gain, "coupling_gain")?;
        if !(0.0..=1.0).contains(&self.coupling_neighbor_factor) {
            return Err(Error::invalid("coupling_neighbor_factor must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.depression_use) {
            return Err(Error::invalid("depression_use must lie in [0, 1)"));
        }
        pos(self.depression_tau_ms, "depression_tau_ms")?;
        if self.excitability_sd < 0.0 {
            return Err(Error::invalid("excitability_sd must be >= 0"));
        }
        if self.stimulus_gain_sd < 0.0 {
            return Err(Error::invalid("stimulus_gain_sd must be >= 0"));
        }
        if !(0.0..self.membrane.threshold).contains(&self.init_potential_max)
            && self.init_potential_max != 0.0
        {
            return Err(Error::invalid(
                "init_potential_max must lie in [0, threshold)",
            ));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        Ok(())
    }

    fn refractory_samples(&self) -> u32 {
        ((self.membrane.refractory_ms * 1e-3 * self.sample_rate_hz as f64).round() as u32).max(1)
    }

    fn tau_samples(&self) -> f64 {
        self.membrane.tau_ms * 1e-3 * self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Synapse {
    target: u16,
    delay_samples: u16,
    weight: f32,
}

/// A built culture: fixed topology plus the parameters it was grown from.
#[derive(Debug, Clone)]
pub struct CultureModel {
    params: CultureParams,
    day: usize,
    inhibitory: Vec<bool>,
    out_offsets: Vec<u32>,
    synapses: Vec<Synapse>,
    max_delay_samples: u16,
}

impl CultureModel {
    /// Grows a culture from scratch; deterministic in `params.seed`.
    pub fn build(params: CultureParams) -> Result<CultureModel> {
        params.validate()?;
        let mut rng = rng_from_seed(derive_seed(params.seed, "culture-build", &[]));
        let n = NUM_CHANNELS;

        let inh_count = (n as f64 * params.inhibitory_fraction).round() as usize;
        let mut inhibitory = vec![false; n];
        for idx in rand::seq::index::sample(&mut rng, n, inh_count) {
            inhibitory[idx] = true;
        }

        let fs_ms = params.sample_rate_hz as f64 * 1e-3;
        let mut out_offsets = Vec::with_capacity(n + 1);
        let mut synapses = Vec::new();
        let mut max_delay = 1u16;
        out_offsets.push(0u32);
        for s in 0..n {
            let (sr, sc) = channel_to_grid(s)?;
            let (sigma, peak, base_w, delay_extra) = if inhibitory[s] {
                (
                    params.inhibitory_sigma,
                    params.inhibitory_peak,
                    -params.inhibition_ratio * params.weight_exc,
                    params.inhibitory_delay_extra_ms,
                )
            } else {
                (
                    params.connect_sigma,
                    params.connect_peak,
                    params.weight_exc,
                    0.0,
                )
            };
            let radius = (3.0 * sigma).ceil() as isize;
            let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    let rr = sr as isize + dr;
                    let cc = sc as isize + dc;
                    if rr < 0 || rr >= GRID_SIDE as isize || cc < 0 || cc >= GRID_SIDE as isize {
                        continue;
                    }
                    let t = rr as usize * GRID_SIDE + cc as usize;
                    if t == s {
                        continue;
                    }
                    let d_sq = (dr * dr + dc * dc) as f64;
                    let d = d_sq.sqrt();
                    if d > 3.0 * sigma {
                        continue;
                    }
                    let p = peak * (-d_sq * inv_two_sigma_sq).exp();
                    if rng.gen::<f64>() < p {
                        let weight = (base_w * rng.gen_range(0.5..1.5)) as f32;
                        let delay_ms = params.delay_base_ms
                            + delay_extra
                            + params.delay_per_unit_ms * d
                            + rng.gen_range(0.0..=params.delay_jitter_ms);
                        let delay = ((delay_ms * fs_ms).round() as u16).max(1);
                        max_delay = max_delay.max(delay);
                        synapses.push(Synapse {
                            target: t as u16,
                            delay_samples: delay,
                            weight,
                        });
                    }
                }
            }
            out_offsets.push(synapses.len() as u32);
        }

        Ok(CultureModel {
            params,
            day: 1,
            inhibitory,
            out_offsets,
            synapses,
            max_delay_samples: max_delay,
        })
    }

    pub fn params(&self) -> &CultureParams {
        &self.params
    }

    /// Session day this model represents (1 on build).
    pub fn day(&self) -> usize {
        self.day
    }

    pub fn n_neurons(&self) -> usize {
        NUM_CHANNELS
    }

    pub fn n_synapses(&self) -> usize {
        self.synapses.len()
    }

    pub fn inhibitory_count(&self) -> usize {
        self.inhibitory.iter().filter(|&&b| b).count()
    }

    pub fn is_inhibitory(&self, neuron: usize) -> bool {
        self.inhibitory[neuron]
    }

    /// Outgoing synapses of one neuron as `(target, delay_samples, weight)`.
    pub fn synapses_of(&self, neuron: usize) -> impl Iterator<Item = (usize, u16, f32)> + '_ {
        let a = self.out_offsets[neuron] as usize;
        let b = self.out_offsets[neuron + 1] as usize;
        self.synapses[a..b]
            .iter()
            .map(|s| (s.target as usize, s.delay_samples, s.weight))
    }

    /// Content hash of the wiring (day, cell types, synapses); two models
    /// behave identically if and only if their hashes and parameters agree.
    pub fn model_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.day as u64).to_le_bytes());
        for &b in &self.inhibitory {
            hasher.update([b as u8]);
        }
        for o in &self.out_offsets {
            hasher.update(o.to_le_bytes());
        }
        for s in &self.synapses {
            hasher.update(s.target.to_le_bytes());
            hasher.update(s.delay_samples.to_le_bytes());
            hasher.update(s.weight.to_bits().to_le_bytes());
        }
        bytes_to_hex(&hasher.finalize())
    }

    /// L2 distance between the effective connectivity matrices of two models
    /// grown from the same parameters. Used to check that drift accumulates.
    pub fn weight_l2_distance(&self, other: &CultureModel) -> f64 {
        use std::collections::BTreeMap;
        let mut diff: BTreeMap<(u16, u16), f64> = BTreeMap::new();
        for (model, sign) in [(self, 1.0f64), (other, -1.0)] {
            for s in 0..NUM_CHANNELS {
                for (t, _, w) in model.synapses_of(s) {
                    *diff.entry((s as u16, t as u16)).or_default() += sign * w as f64;
                }
            }
        }
        diff.values().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// One day of plasticity: a fraction of synapses migrate to freshly drawn
    /// targets (same kernel as at build time), all weights receive additive
    /// Gaussian jitter, signs are preserved and magnitudes clamped. Returns a
    /// new model; the input is untouched.
    pub fn advance_day(&self, drift: &DriftParams, seed: u64) -> Result<CultureModel> {
        drift.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, "culture-drift", &[self.day as u64]));
        let fs_ms = self.params.sample_rate_hz as f64 * 1e-3;
        let jitter = if drift.weight_jitter_sd > 0.0 {
            Some(
                Normal::new(0.0, drift.weight_jitter_sd)
                    .map_err(|e| Error::invalid(e.to_string()))?,
            )
        } else {
            None
        };

        let mut next = self.clone();
        next.day += 1;
        for s in 0..NUM_CHANNELS {
            let (sigma, delay_extra) = if self.inhibitory[s] {
                (
                    self.params.inhibitory_sigma,
                    self.params.inhibitory_delay_extra_ms,
                )
            } else {
                (self.params.connect_sigma, 0.0)
            };
            let a = self.out_offsets[s] as usize;
            let b = self.out_offsets[s + 1] as usize;
            for idx in a..b {
                let syn = &mut next.synapses[idx];
                if drift.rewire_fraction > 0.0 && rng.gen::<f64>() < drift.rewire_fraction {
                    let (t, d) = sample_kernel_target(s, sigma, &mut rng)?;
                    syn.target = t as u16;
                    let delay_ms = self.params.delay_base_ms
                        + delay_extra
                        + self.params.delay_per_unit_ms * d
                        + rng.gen_range(0.0..=self.params.delay_jitter_ms);
                    syn.delay_samples = ((delay_ms * fs_ms).round() as u16).max(1);
                    next.max_delay_samples = next.max_delay_samples.max(syn.delay_samples);
                }
                if let Some(dist) = &jitter {
                    let mut w = syn.weight as f64 + dist.sample(&mut rng);
                    let clamp = self.params.weight_clamp;
                    if self.inhibitory[s] {
                        w = w.clamp(-clamp, 0.0);
                    } else {
                        w = w.clamp(0.0, clamp);
                    }
                    syn.weight = w as f32;
                }
            }
        }
        Ok(next)
    }
}

/// Draws a target from the truncated Gaussian kernel around `source`,
/// excluding the source itself. Returns the target and its distance.
fn sample_kernel_target(
    source: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<(usize, f64)> {
    let (sr, sc) = channel_to_grid(source)?;
    let radius = (3.0 * sigma).ceil() as isize;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    let mut total = 0.0;
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let rr = sr as isize + dr;
            let cc = sc as isize + dc;
            if rr < 0 || rr >= GRID_SIDE as isize || cc < 0 || cc >= GRID_SIDE as isize {
                continue;
            }
            let t = rr as usize * GRID_SIDE + cc as usize;
            if t == source {
                continue;
            }
            let d_sq = (dr * dr + dc * dc) as f64;
            let d = d_sq.sqrt();
            if d > 3.0 * sigma {
                continue;
            }
            let w = (-d_sq * inv_two_sigma_sq).exp();
            total += w;
            candidates.push((t, d, total));
        }
    }
    let pick = rng.gen_range(0.0..total);
    let i = candidates.partition_point(|&(_, _, cum)| cum <= pick);
    let (t, d, _) = candidates[i.min(candidates.len() - 1)];
    Ok((t, d))
}

/// Stimulation rendered as per-sample membrane injections.
fn stimulus_events(
    pattern: &StimulusPattern,
    onset_sample: u32,
    params: &CultureParams,
) -> Result<Vec<(u32, u16, f32)>> {
    pattern.pulse.validate()?;
    let fs = params.sample_rate_hz as f64;
    let pos_samples = ((pattern.pulse.phase_pos_us * 1e-6 * fs).round() as u32).max(1);
    let neg_samples = ((pattern.pulse.phase_neg_us * 1e-6 * fs).round() as u32).max(1);
    let dv_base = params.coupling_gain * pattern.pulse.amplitude_ua * (1e3 / fs);
    let mut events = Vec::new();
    for k in 0..pos_samples + neg_samples {
        let phase_sign = if k < pos_samples { 1.0 } else { -1.0 };
        for pair in &pattern.pairs {
            for (electrode, electrode_sign) in [(pair.positive, 1.0), (pair.negative, -1.0)] {
                let (r, c) = channel_to_grid(electrode as usize)?;
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let rr = r as i32 + dr;
                        let cc = c as i32 + dc;
                        if rr < 0 || rr >= GRID_SIDE as i32 || cc < 0 || cc >= GRID_SIDE as i32 {
                            continue;
                        }
                        let neuron = (rr as usize * GRID_SIDE + cc as usize) as u16;
                        let factor = if dr == 0 && dc == 0 {
                            1.0
                        } else {
                            params.coupling_neighbor_factor
                        };
                        let dv = (phase_sign * electrode_sign * dv_base * factor) as f32;
                        events.push((onset_sample + k, neuron, dv));
                    }
                }
            }
        }
    }
    Ok(events)
}

struct Engine<'m> {
    model: &'m CultureModel,
    threshold: f32,
    reset: f32,
    refr_samples: u32,
    decay: Vec<f32>,
    ring_len: u32,
    ring: Vec<Vec<(u16, f32)>>,
    v: Vec<f32>,
    last: Vec<u32>,
    refr_until: Vec<u32>,
    resource: Vec<f32>,
    resource_at: Vec<u32>,
    dep_use: f32,
    dep_tau_samples: f32,
    spikes: Vec<Vec<u64>>,
    total_spikes: u64,
    spike_cap: u64,
}

impl<'m> Engine<'m> {
    fn new(model: &'m CultureModel, n_samples: u32) -> Engine<'m> {
        let p = &model.params;
        let tau = p.tau_samples();
        // Beyond ~20 time constants the residual is below f32 resolution.
        let lut_len = ((tau * 20.0).ceil() as usize).min(1 << 17);
        let decay: Vec<f32> = (0..lut_len)
            .map(|dt| (-(dt as f64) / tau).exp() as f32)
            .collect();
        let ring_len = model.max_delay_samples as u32 + 1;
        let duration_s = n_samples as f64 / p.sample_rate_hz as f64;
        // A culture pinned at its refractory ceiling on half its neurons is
        // far outside the operating regime: treat it as runaway excitation.
        let max_rate = 1e3 / p.membrane.refractory_ms;
        let spike_cap =
            ((NUM_CHANNELS as f64 * duration_s * max_rate * 0.5) as u64).max(10_000);
        Engine {
            model,
            threshold: p.membrane.threshold as f32,
            reset: p.membrane.reset as f32,
            refr_samples: p.refractory_samples(),
            decay,
            ring_len,
            ring: (0..ring_len).map(|_| Vec::new()).collect(),
            v: vec![0.0; NUM_CHANNELS],
            last: vec![0; NUM_CHANNELS],
            refr_until: vec![0; NUM_CHANNELS],
            resource: vec![1.0; NUM_CHANNELS],
            resource_at: vec![0; NUM_CHANNELS],
            dep_use: p.depression_use as f32,
            dep_tau_samples: (p.depression_tau_ms * 1e-3 * p.sample_rate_hz as f64) as f32,
            spikes: vec![Vec::new(); NUM_CHANNELS],
            total_spikes: 0,
            spike_cap,
        }
    }

    #[inline]
    fn step_neuron(&mut self, n: usize, t: u32, dv: f32) -> Result<()> {
        if t < self.refr_until[n] {
            return Ok(());
        }
        let dt = (t - self.last[n]) as usize;
        let mut v = self.v[n];
        v = if dt < self.decay.len() {
            v * self.decay[dt]
        } else {
            0.0
        };
        v += dv;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "membrane potential of neuron {n} diverged at sample {t}"
            )));
        }
        self.last[n] = t;
        if v >= self.threshold {
            self.v[n] = self.reset;
            self.refr_until[n] = t + self.refr_samples;
            self.spikes[n].push(t as u64);
            self.total_spikes += 1;
            if self.total_spikes > self.spike_cap {
                return Err(Error::Simulation(format!(
                    "runaway excitation: more than {} spikes",
                    self.spike_cap
                )));
            }
            // Release efficacy follows a depleting resource: each spike spends
            // a fixed fraction of what has recovered since the previous one.
            let release = if self.dep_use > 0.0 {
                let dt = (t - self.resource_at[n]) as f32;
                let r = 1.0 - (1.0 - self.resource[n]) * (-dt / self.dep_tau_samples).exp();
                self.resource_at[n] = t;
                self.resource[n] = r * (1.0 - self.dep_use);
                r
            } else {
                1.0
            };
            let a = self.model.out_offsets[n] as usize;
            let b = self.model.out_offsets[n + 1] as usize;
            for s in &self.model.synapses[a..b] {
                let slot = ((t + s.delay_samples as u32) % self.ring_len) as usize;
                self.ring[slot].push((s.target, s.weight * release));
            }
        } else {
            self.v[n] = v;
        }
        Ok(())
    }
}

/// Core simulation loop shared by trials and spontaneous recordings.
fn run_culture(
    model: &CultureModel,
    n_samples: u32,
    excitability_gain: f64,
    stim: &[(u32, u16, f32)],
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    let p = &model.params;
    let mut rng = rng_from_seed(seed);
    let mut engine = Engine::new(model, n_samples);
    for v in engine.v.iter_mut() {
        *v = rng.gen_range(0.0..=p.init_potential_max) as f32;
    }

    let lambda = NUM_CHANNELS as f64 * p.background_rate_hz * excitability_gain
        / p.sample_rate_hz as f64;
    let background = if lambda > 0.0 {
        Some(Poisson::new(lambda).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let bg_weight = p.background_weight as f32;

    let mut scratch: Vec<(u16, f32)> = Vec::new();
    let mut stim_idx = 0usize;
    for t in 0..n_samples {
        let slot = (t % engine.ring_len) as usize;
        if !engine.ring[slot].is_empty() {
            std::mem::swap(&mut scratch, &mut engine.ring[slot]);
            for &(n, w) in &scratch {
                engine.step_neuron(n as usize, t, w)?;
            }
            scratch.clear();
        }
        if let Some(dist) = &background {
            let k = dist.sample(&mut rng) as usize;
            for _ in 0..k {
                let n = rng.gen_range(0..NUM_CHANNELS);
                engine.step_neuron(n, t, bg_weight)?;
            }
        }
        while stim_idx < stim.len() && stim[stim_idx].0 == t {
            let (_, n, dv) = stim[stim_idx];
            engine.step_neuron(n as usize, t, dv)?;
            stim_idx += 1;
        }
    }
    Ok(engine.spikes)
}

fn checked_samples(duration_s: f64, sample_rate_hz: u32) -> Result<u32> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid("duration must be positive"));
    }
    let n = (duration_s * sample_rate_hz as f64).round();
    if n >= u32::MAX as f64 {
        return Err(Error::invalid("duration too long"));
    }
    Ok(n as u32)
}

/// Simulates one stimulation trial. The recording spans `pre_s` seconds
/// before onset and `post_s` after it, with `t0_offset_s = -pre_s` so that
/// sample `pre_s * fs` is the stimulus onset.
pub fn simulate_trial(
    model: &CultureModel,
    pattern: &StimulusPattern,
    pre_s: f64,
    post_s: f64,
    seed: u64,
) -> Result<SpikeTrain> {
    let p = &model.params;
    p.validate()?;
    let n_samples = checked_samples(pre_s + post_s, p.sample_rate_hz)?;
    let onset = (pre_s * p.sample_rate_hz as f64).round() as u32;
    let mut stim = stimulus_events(pattern, onset, p)?;

    let mut rng = rng_from_seed(derive_seed(seed, "trial-state", &[]));
    let lognormal = |sd: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Result<f64> {
        if sd > 0.0 {
            let z: f64 = Normal::new(0.0, sd)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(rng);
            Ok(z.exp())
        } else {
            Ok(1.0)
        }
    };
    let state_gain = lognormal(p.excitability_sd, &mut rng)?;
    let stim_gain = lognormal(p.stimulus_gain_sd, &mut rng)?;
    for ev in stim.iter_mut() {
        ev.2 = (ev.2 as f64 * stim_gain) as f32;
    }
    let run_seed = derive_seed(seed, "trial-run", &[]);
    let spikes = run_culture(model, n_samples, state_gain, &stim, run_seed)?;
    SpikeTrain::from_parts(p.sample_rate_hz, -pre_s, n_samples as u64, spikes)
}

/// Records spontaneous activity (no stimulation, unit excitability).
pub fn record_spontaneous(model: &CultureModel, duration_s: f64, seed: u64) -> Result<SpikeTrain> {
    let p = &model.params;
    p.validate()?;
    let n_samples = checked_samples(duration_s, p.sample_rate_hz)?;
    let run_seed = derive_seed(seed, "spontaneous-run", &[]);
    let spikes = run_culture(model, n_samples, 1.0, &[], run_seed)?;
    SpikeTrain::from_parts(p.sample_rate_hz, 0.0, n_samples as u64, spikes)
}

/// Extracellular rendering parameters for trace emission.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub noise_sd_uv: f32,
    /// Per-neuron spike amplitudes are drawn from U(min, max) at model seed,
    /// so a neuron keeps its amplitude across trials.
    pub amp_min_uv: f32,
    pub amp_max_uv: f32,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            noise_sd_uv: 3.0,
            amp_min_uv: 40.0,
            amp_max_uv: 120.0,
        }
    }
}

/// Simulates a trial and renders it as a raw extracellular recording: every
/// neuron's spikes are stamped on its own electrode with the standard
/// biphasic waveform on top of Gaussian noise.
pub fn simulate_trial_with_trace(
    model: &CultureModel,
    pattern: &StimulusPattern,
    pre_s: f64,
    post_s: f64,
    seed: u64,
    trace: &TraceParams,
) -> Result<(SpikeTrain, RawRecording)> {
    if !(trace.amp_min_uv > 0.0 && trace.amp_max_uv >= trace.amp_min_uv) {
        return Err(Error::invalid("trace amplitude range is empty"));
    }
    if !(trace.noise_sd_uv >= 0.0) {
        return Err(Error::invalid("trace noise must be >= 0"));
    }
    let train = simulate_trial(model, pattern, pre_s, post_s, seed)?;
    let p = &model.params;

    let mut amp_rng = rng_from_seed(derive_seed(p.seed, "trace-amplitudes", &[]));
    let mut noise_rng = rng_from_seed(derive_seed(seed, "trace-noise", &[]));
    let mut rec = RawRecording::zeroed(
        NUM_CHANNELS,
        train.n_samples() as usize,
        p.sample_rate_hz,
        train.t0_offset_s(),
    )?;
    let noise = if trace.noise_sd_uv > 0.0 {
        Some(Normal::new(0.0f32, trace.noise_sd_uv).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    for c in 0..NUM_CHANNELS {
        let amp = amp_rng.gen_range(trace.amp_min_uv..=trace.amp_max_uv);
        let template = SpikeTemplate::biphasic(amp, p.sample_rate_hz)?;
        let buf = rec.channel_mut(c)?;
        if let Some(dist) = &noise {
            for s in buf.iter_mut() {
                *s = dist.sample(&mut noise_rng);
            }
        }
        let peak = template.peak_index() as i64;
        for &t in train.channel(c)? {
            let start = t as i64 - peak;
            for (k, &v) in template.samples().iter().enumerate() {
                let idx = start + k as i64;
                if idx >= 0 && (idx as usize) < buf.len() {
                    buf[idx as usize] += v;
                }
            }
        }
    }
    Ok((train, rec))
}
