//! Spike-count readout.
//!
//! A trial's feature vector holds, per electrode, the number of spikes inside
//! the closed window `[t_s, t_s + W]` that starts at stimulus onset. Channels
//! within a Chebyshev square of `mask_half_width` around any stimulated
//! electrode are forced to zero (masked, not removed), so the classifier sees
//! network response rather than stimulation artifact. The spatial-shuffle
//! control permutes the non-masked entries of a vector uniformly, destroying
//! spatial structure while keeping the count multiset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::detect::SpikeTrain;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::signal::{channel_to_grid, GRID_SIDE, NUM_CHANNELS};
use crate::stim::StimulusPattern;

/// Readout configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutParams {
    /// Count window length in seconds, measured from stimulus onset.
    pub window_s: f64,
    /// Chebyshev half-width of the square masked around each stimulated
    /// electrode.
    pub mask_half_width: usize,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        ReadoutParams {
            window_s: 5e-3,
            mask_half_width: 2,
        }
    }
}

impl ReadoutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) || !self.window_s.is_finite() {
            return Err(Error::invalid("window_s must be positive"));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> u64 {
        (self.window_s * sample_rate_hz as f64).round() as u64
    }
}

/// Channels excluded from a pattern's feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    masked: Vec<bool>,
    count: usize,
}

impl ChannelMask {
    /// Square mask of Chebyshev radius `half_width` around every stimulated
    /// electrode of `pattern`, clipped at the grid edges.
    pub fn for_pattern(pattern: &StimulusPattern, half_width: usize) -> Result<Arc<ChannelMask>> {
        let mut masked = vec![false; NUM_CHANNELS];
        let h = half_width as isize;
        for ch in pattern.stimulated_channels() {
            let (r, c) = channel_to_grid(ch as usize)?;
            for dr in -h..=h {
                for dc in -h..=h {
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr >= 0 && rr < GRID_SIDE as isize && cc >= 0 && cc < GRID_SIDE as isize {
                        masked[rr as usize * GRID_SIDE + cc as usize] = true;
                    }
                }
            }
        }
        let count = masked.iter().filter(|&&m| m).count();
        Ok(Arc::new(ChannelMask { masked, count }))
    }

    /// An empty mask (nothing excluded).
    pub fn none() -> Arc<ChannelMask> {
        Arc::new(ChannelMask {
            masked: vec![false; NUM_CHANNELS],
            count: 0,
        })
    }

    pub fn is_masked(&self, channel: usize) -> bool {
        self.masked.get(channel).copied().unwrap_or(false)
    }

    pub fn masked_count(&self) -> usize {
        self.count
    }

    pub fn masked_fraction(&self) -> f64 {
        self.count as f64 / NUM_CHANNELS as f64
    }

    pub fn flags(&self) -> &[bool] {
        &self.masked
    }
}

/// One trial's readout: a 4096-entry vector plus trial metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    pub label: u8,
    pub session: String,
    pub trial: usize,
    pub onset_sample: u64,
    pub window_s: f64,
    pub mask: Arc<ChannelMask>,
}

impl FeatureVector {
    /// Wraps raw values; masked entries must already be zero.
    pub fn new(
        values: Vec<f64>,
        label: u8,
        session: String,
        trial: usize,
        onset_sample: u64,
        window_s: f64,
        mask: Arc<ChannelMask>,
    ) -> Result<Self> {
        if values.len() != NUM_CHANNELS {
            return Err(Error::mismatch(format!(
                "feature vector of {} entries, expected {NUM_CHANNELS}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector entries must be finite".into()));
        }
        for (c, v) in values.iter().enumerate() {
            if mask.is_masked(c) && *v != 0.0 {
                return Err(Error::invalid(format!(
                    "masked channel {c} carries non-zero value {v}"
                )));
            }
        }
        Ok(FeatureVector {
            values,
            label,
            session,
            trial,
            onset_sample,
            window_s,
            mask,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Counts spikes per channel in the closed window `[onset, onset + W]` and
/// applies the pattern mask.
pub fn extract_features(
    train: &SpikeTrain,
    onset_sample: u64,
    params: &ReadoutParams,
    pattern: &StimulusPattern,
    session: &str,
    trial: usize,
) -> Result<FeatureVector> {
    params.validate()?;
    if train.n_channels() != NUM_CHANNELS {
        return Err(Error::mismatch(format!(
            "readout expects {NUM_CHANNELS} channels, got {}",
            train.n_channels()
        )));
    }
    let w = params.window_samples(train.sample_rate_hz());
    let end = onset_sample
        .checked_add(w)
        .ok_or_else(|| Error::range("window end overflows"))?;
    if end >= train.n_samples() {
        return Err(Error::range(format!(
            "window [{onset_sample}, {end}] extends past recording of {} samples",
            train.n_samples()
        )));
    }
    let mask = ChannelMask::for_pattern(pattern, params.mask_half_width)?;
    let mut values = vec![0.0f64; NUM_CHANNELS];
    for (c, value) in values.iter_mut().enumerate() {
        if mask.is_masked(c) {
            continue;
        }
        let times = train.channel(c)?;
        let lo = times.partition_point(|&t| t < onset_sample);
        let hi = times.partition_point(|&t| t <= end);
        *value = (hi - lo) as f64;
    }
    FeatureVector::new(
        values,
        pattern.label,
        session.to_string(),
        trial,
        onset_sample,
        params.window_s,
        mask,
    )
}

/// Uniformly permutes the non-masked entries of `fv` (seeded); masked entries
/// stay zero. Used as the chance-level control.
pub fn shuffle_spatial(fv: &FeatureVector, seed: u64) -> FeatureVector {
    let mut rng = rng_from_seed(seed);
    let indices: Vec<usize> = (0..fv.values.len())
        .filter(|&c| !fv.mask.is_masked(c))
        .collect();
    let mut pool: Vec<f64> = indices.iter().map(|&c| fv.values[c]).collect();
    use rand::seq::SliceRandom;
    pool.shuffle(&mut rng);
    let mut values = vec![0.0f64; fv.values.len()];
    for (&c, v) in indices.iter().zip(pool) {
        values[c] = v;
    }
    FeatureVector {
        values,
        label: fv.label,
        session: fv.session.clone(),
        trial: fv.trial,
        onset_sample: fv.onset_sample,
        window_s: fv.window_s,
        mask: Arc::clone(&fv.mask),
    }
}

// --- feature CSV ------------------------------------------------------------

fn check_session_id(session: &str) -> Result<()> {
    if session.is_empty() || session.contains([',', '\r', '\n']) {
        return Err(Error::invalid(format!("session id {session:?} not CSV-safe")));
    }
    Ok(())
}

/// Writes `label,session,trial,c0..c4095` rows (RFC 4180, CRLF). Values use
/// the shortest round-trip decimal form, so integers print without a point.
pub fn write_features_csv<W: Write>(w: &mut W, features: &[FeatureVector]) -> Result<()> {
    let mut header = String::from("label,session,trial");
    for c in 0..NUM_CHANNELS {
        header.push_str(",c");
        header.push_str(&c.to_string());
    }
    header.push_str("\r\n");
    w.write_all(header.as_bytes())?;
    for fv in features {
        check_session_id(&fv.session)?;
        let mut line = format!("{},{},{}", fv.label, fv.session, fv.trial);
        for v in &fv.values {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line.push_str("\r\n");
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Reads a feature CSV. Masks are not stored in the file; `mask_for_label`
/// reattaches them (use [`ChannelMask::none`] when masking is irrelevant).
/// Onset samples are likewise not stored and are set to zero.
pub fn read_features_csv<R: Read>(
    r: &mut R,
    window_s: f64,
    mask_for_label: impl Fn(u8) -> Arc<ChannelMask>,
) -> Result<Vec<FeatureVector>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .map(|l| l.trim_end_matches('\r'))
        .ok_or_else(|| Error::format("empty feature CSV"))?;
    if !header.starts_with("label,session,trial,c0,") || !header.ends_with(&format!("c{}", NUM_CHANNELS - 1))
    {
        return Err(Error::format("unexpected feature CSV header"));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: u8 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("line {}: bad label", lineno + 2)))?;
        let session = fields
            .next()
            .ok_or_else(|| Error::format(format!("line {}: missing session", lineno + 2)))?
            .to_string();
        let trial: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("line {}: bad trial", lineno + 2)))?;
        let mut values = Vec::with_capacity(NUM_CHANNELS);
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad value {f:?}", lineno + 2)))?;
            values.push(v);
        }
        if values.len() != NUM_CHANNELS {
            return Err(Error::format(format!(
                "line {}: {} values, expected {NUM_CHANNELS}",
                lineno + 2,
                values.len()
            )));
        }
        out.push(FeatureVector::new(
            values,
            label,
            session,
            trial,
            0,
            window_s,
            mask_for_label(label),
        )?);
    }
    Ok(out)
}

pub fn write_features_csv_file(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features_csv(&mut w, features)?;
    w.flush()?;
    Ok(())
}

pub fn read_features_csv_file(
    path: &Path,
    window_s: f64,
    mask_for_label: impl Fn(u8) -> Arc<ChannelMask>,
) -> Result<Vec<FeatureVector>> {
    let mut r = BufReader::new(File::open(path)?);
    read_features_csv(&mut r, window_s, mask_for_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::grid_to_channel;
    use crate::stim::{build_pattern, GlyphLayout, PulseParams};

    fn train_with(spikes: Vec<(usize, Vec<u64>)>, n_samples: u64) -> SpikeTrain {
        let mut all = vec![Vec::new(); NUM_CHANNELS];
        for (c, times) in spikes {
            all[c] = times;
        }
        SpikeTrain::from_parts(20_000, 0.0, n_samples, all).unwrap()
    }

    fn pattern(label: u8) -> StimulusPattern {
        build_pattern(label, &GlyphLayout::default(), &PulseParams::default()).unwrap()
    }

    #[test]
    fn mask_is_a_clipped_chebyshev_square() {
        let mut p = pattern(1);
        p.pairs.truncate(1);
        let (pr, pc) = channel_to_grid(p.pairs[0].positive as usize).unwrap();
        let (nr, _) = channel_to_grid(p.pairs[0].negative as usize).unwrap();
        let mask = ChannelMask::for_pattern(&p, 2).unwrap();
        // Two vertically adjacent electrodes: union of two 5x5 squares = 5x6.
        assert_eq!(mask.masked_count(), 30);
        for r in 0..GRID_SIDE {
            for c in 0..GRID_SIDE {
                let expect = (c as isize - pc as isize).abs() <= 2
                    && r as isize >= pr.min(nr) as isize - 2
                    && r as isize <= pr.max(nr) as isize + 2;
                assert_eq!(mask.is_masked(r * GRID_SIDE + c), expect, "({r}, {c})");
            }
        }
    }

    #[test]
    fn mask_half_width_zero_covers_only_the_electrodes() {
        let p = pattern(8);
        let mask = ChannelMask::for_pattern(&p, 0).unwrap();
        assert_eq!(mask.masked_count(), 42);
    }

    #[test]
    fn mask_clips_at_the_grid_edge() {
        let mut p = pattern(1);
        p.pairs = vec![crate::stim::ElectrodePair {
            positive: 0,
            negative: 1,
        }];
        let mask = ChannelMask::for_pattern(&p, 2).unwrap();
        // Corner electrodes 0 and 1: rows 0..=2, cols 0..=3.
        assert_eq!(mask.masked_count(), 12);
    }

    #[test]
    fn default_mask_stays_under_a_tenth_of_the_grid() {
        for label in 0..10 {
            let mask = ChannelMask::for_pattern(&pattern(label), 2).unwrap();
            assert!(mask.masked_fraction() < 0.10, "digit {label}");
        }
        let full = ChannelMask::for_pattern(&pattern(8), 2).unwrap();
        assert!(full.masked_fraction() > 0.05, "digit 8 mask should be substantial");
    }

    #[test]
    fn counts_match_a_brute_force_recount() {
        let c = grid_to_channel(10, 10).unwrap();
        let train = train_with(vec![(c, vec![100, 150, 200, 500]), (0, vec![99, 150, 300])], 1000);
        let params = ReadoutParams {
            window_s: 5e-3,
            mask_half_width: 2,
        };
        // 5 ms at 20 kHz = 100 samples; window [100, 200] inclusive.
        let fv = extract_features(&train, 100, &params, &pattern(3), "s", 0).unwrap();
        assert_eq!(fv.values()[c], 3.0);
        assert_eq!(fv.values()[0], 1.0, "spikes at 99 and 300 fall outside [100, 200]");
        assert_eq!(fv.label, 3);
        assert!(fv.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn window_is_closed_on_both_ends() {
        let c = grid_to_channel(5, 40).unwrap();
        let train = train_with(vec![(c, vec![100, 200, 201])], 1000);
        let params = ReadoutParams {
            window_s: 5e-3,
            mask_half_width: 2,
        };
        let fv = extract_features(&train, 100, &params, &pattern(1), "s", 0).unwrap();
        assert_eq!(fv.values()[c], 2.0, "onset and onset+W included, onset+W+1 not");
    }

    #[test]
    fn window_past_recording_end_is_rejected() {
        let train = train_with(vec![], 150);
        let params = ReadoutParams::default();
        assert!(extract_features(&train, 100, &params, &pattern(1), "s", 0).is_err());
        // End exactly at the last sample is fine: [50, 150] needs sample 150.
        let train = train_with(vec![], 151);
        assert!(extract_features(&train, 50, &params, &pattern(1), "s", 0).is_ok());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let train = SpikeTrain::from_parts(20_000, 0.0, 1000, vec![Vec::new(); 64]).unwrap();
        let err = extract_features(&train, 0, &ReadoutParams::default(), &pattern(1), "s", 0);
        assert!(err.is_err());
    }

    #[test]
    fn masked_channels_read_zero_despite_spikes() {
        let p = pattern(1);
        let hot = p.pairs[0].positive as usize;
        let train = train_with(vec![(hot, vec![110, 120, 130])], 1000);
        let fv = extract_features(&train, 100, &ReadoutParams::default(), &p, "s", 0).unwrap();
        assert_eq!(fv.values()[hot], 0.0);
        assert!(fv.mask.is_masked(hot));
    }

    #[test]
    fn constructor_rejects_masked_nonzero() {
        let p = pattern(1);
        let mask = ChannelMask::for_pattern(&p, 2).unwrap();
        let hot = p.pairs[0].positive as usize;
        let mut values = vec![0.0; NUM_CHANNELS];
        values[hot] = 1.0;
        assert!(FeatureVector::new(values, 1, "s".into(), 0, 0, 5e-3, mask).is_err());
    }

    #[test]
    fn shuffle_preserves_multiset_and_mask() {
        let c1 = grid_to_channel(2, 2).unwrap();
        let c2 = grid_to_channel(60, 60).unwrap();
        let train = train_with(vec![(c1, vec![100, 101]), (c2, vec![150])], 1000);
        let fv = extract_features(&train, 100, &ReadoutParams::default(), &pattern(7), "s", 0)
            .unwrap();
        let shuffled = shuffle_spatial(&fv, 42);
        assert_eq!(shuffled.sum(), fv.sum());
        for c in 0..NUM_CHANNELS {
            if fv.mask.is_masked(c) {
                assert_eq!(shuffled.values()[c], 0.0);
            }
        }
        let mut a: Vec<u64> = fv.values().iter().map(|&v| v as u64).collect();
        let mut b: Vec<u64> = shuffled.values().iter().map(|&v| v as u64).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(shuffle_spatial(&fv, 42), shuffled, "seeded shuffle repeats");
        assert_ne!(
            shuffle_spatial(&fv, 43).values(),
            shuffled.values(),
            "different seed moves the mass elsewhere"
        );
    }

    #[test]
    fn features_csv_round_trip() {
        let c = grid_to_channel(33, 7).unwrap();
        let train = train_with(vec![(c, vec![120, 140])], 1000);
        let p = pattern(4);
        let fv = extract_features(&train, 100, &ReadoutParams::default(), &p, "br1_day1", 17)
            .unwrap();
        let mut bytes = Vec::new();
        write_features_csv(&mut bytes, &[fv.clone()]).unwrap();
        let mask = Arc::clone(&fv.mask);
        let back = read_features_csv(&mut bytes.as_slice(), 5e-3, |_| Arc::clone(&mask)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].values(), fv.values());
        assert_eq!(back[0].label, 4);
        assert_eq!(back[0].session, "br1_day1");
        assert_eq!(back[0].trial, 17);
    }

    #[test]
    fn features_csv_rejects_malformed_rows() {
        let bad = b"label,session,trial,c0\r\n".to_vec();
        assert!(read_features_csv(&mut bad.as_slice(), 5e-3, |_| ChannelMask::none()).is_err());
        let mut header = String::from("label,session,trial");
        for c in 0..NUM_CHANNELS {
            header.push_str(&format!(",c{c}"));
        }
        let short_row = format!("{header}\r\n3,s,0,1.0,2.0\r\n");
        assert!(read_features_csv(&mut short_row.as_bytes(), 5e-3, |_| ChannelMask::none())
            .is_err());
    }
}
