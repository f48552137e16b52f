//! Declarative experiment configuration: one TOML file drives simulation,
//! feature extraction, training, and every report.
//!
//! Any subset of fields may be given; the rest fall back to defaults, and
//! unknown keys are rejected so typos fail loudly. Seed fields inside
//! sub-configs are honored by the single-shot CLI subcommands, while full
//! experiment runs derive all working seeds from `master_seed` so that one
//! number reproduces the entire grid.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::culture::{CultureParams, DriftParams, TraceParams};
use crate::detect::DetectorParams;
use crate::error::{Error, Result};
use crate::readout::ReadoutParams;
use crate::reservoir::ARParams;
use crate::seed::bytes_to_hex;
use crate::slp::Hyperparams;
use crate::stim::{GlyphLayout, PulseParams};

/// Trial order and pacing within one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Presentations of each digit per session.
    pub repetitions: usize,
    pub inter_stimulus_s: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            repetitions: 20,
            inter_stimulus_s: 2.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("schedule.repetitions must be >= 1"));
        }
        if !(self.inter_stimulus_s > 0.0) || !self.inter_stimulus_s.is_finite() {
            return Err(Error::invalid("schedule.inter_stimulus_s must be positive"));
        }
        Ok(())
    }
}

/// Recording spans simulated around each trial and for the spontaneous
/// segment of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub trial_pre_s: f64,
    pub trial_post_s: f64,
    pub spontaneous_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            trial_pre_s: 0.2,
            trial_post_s: 0.1,
            spontaneous_s: 12.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.trial_pre_s, "timing.trial_pre_s"),
            (self.trial_post_s, "timing.trial_post_s"),
            (self.spontaneous_s, "timing.spontaneous_s"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{what} must be positive")));
            }
        }
        Ok(())
    }
}

fn default_windows_ms() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 5.0).collect()
}

/// Everything a full experiment run needs, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Independent cultures grown from different wiring seeds.
    pub replicates: usize,
    /// Stimulation sessions per culture, one per simulated day.
    pub days: usize,
    pub culture: CultureParams,
    pub drift: DriftParams,
    pub glyph: GlyphLayout,
    pub pulse: PulseParams,
    pub schedule: ScheduleConfig,
    pub timing: TimingConfig,
    pub readout: ReadoutParams,
    /// Readout windows swept by the window experiment, milliseconds.
    pub windows_ms: Vec<f64>,
    /// Epoch count used by the window sweep, which trains an order of
    /// magnitude more models than the headline evaluation.
    pub sweep_epochs: usize,
    pub classifier: Hyperparams,
    pub detector: DetectorParams,
    pub trace: TraceParams,
    pub ar: ARParams,
    /// Noise realizations averaged into the artificial-reservoir row.
    pub ar_noise_runs: usize,
    pub ar_noise_multiplier: f64,
    /// Also render and store raw voltage traces per trial (large).
    pub store_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            replicates: 3,
            days: 3,
            culture: CultureParams::default(),
            drift: DriftParams::default(),
            glyph: GlyphLayout::default(),
            pulse: PulseParams::default(),
            schedule: ScheduleConfig::default(),
            timing: TimingConfig::default(),
            readout: ReadoutParams::default(),
            windows_ms: default_windows_ms(),
            sweep_epochs: 250,
            classifier: Hyperparams::default(),
            detector: DetectorParams::default(),
            trace: TraceParams::default(),
            ar: ARParams::default(),
            ar_noise_runs: 10,
            ar_noise_multiplier: 1.0,
            store_traces: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be >= 1"));
        }
        if self.days == 0 {
            return Err(Error::invalid("days must be >= 1"));
        }
        self.culture.validate()?;
        self.drift.validate()?;
        self.glyph.validate()?;
        self.pulse.validate()?;
        self.schedule.validate()?;
        self.timing.validate()?;
        self.readout.validate()?;
        self.classifier.validate()?;
        self.detector.validate()?;
        self.ar.validate()?;
        if self.windows_ms.is_empty() {
            return Err(Error::invalid("windows_ms must not be empty"));
        }
        for w in &self.windows_ms {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::invalid("windows_ms entries must be positive"));
            }
        }
        for pair in self.windows_ms.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid("windows_ms must be strictly increasing"));
            }
        }
        let max_window_s = self.windows_ms.last().unwrap() * 1e-3;
        if self.timing.trial_post_s < max_window_s + 0.005 {
            return Err(Error::invalid(format!(
                "timing.trial_post_s must cover the largest window plus 5 ms \
                 (need >= {:.3} s)",
                max_window_s + 0.005
            )));
        }
        if self.sweep_epochs == 0 {
            return Err(Error::invalid("sweep_epochs must be >= 1"));
        }
        if self.ar_noise_runs == 0 {
            return Err(Error::invalid("ar_noise_runs must be >= 1"));
        }
        if !(self.ar_noise_multiplier >= 0.0) || !self.ar_noise_multiplier.is_finite() {
            return Err(Error::invalid("ar_noise_multiplier must be >= 0"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Hash of the canonical serialized form; configs that differ in any
    /// effective value hash differently.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = self.to_toml_string()?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(bytes_to_hex(&hasher.finalize()))
    }
}
