//! Seven-segment stimulus encoding.
//!
//! Digits 0-9 are rendered as lit segments of a seven-segment glyph drawn on
//! the electrode grid. Each lit segment contributes `pairs_per_segment`
//! adjacent electrode pairs with alternating polarity along the segment, and
//! every pair receives the same charge-balanced biphasic current pulse at
//! stimulus onset. A session schedule repeats all ten digits a fixed number of
//! times in a seeded random order at a constant inter-stimulus interval.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::signal::{grid_to_channel, GRID_SIDE};

/// The seven segments of a digit glyph, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

pub const ALL_SEGMENTS: [Segment; 7] = [
    Segment::A,
    Segment::B,
    Segment::C,
    Segment::D,
    Segment::E,
    Segment::F,
    Segment::G,
];

/// Lit segments for each digit of a standard seven-segment display.
pub fn digit_to_segments(label: u8) -> Result<&'static [Segment]> {
    use Segment::*;
    const SEGS: [&[Segment]; 10] = [
        &[A, B, C, D, E, F],    // 0
        &[B, C],                // 1
        &[A, B, D, E, G],       // 2
        &[A, B, C, D, G],       // 3
        &[B, C, F, G],          // 4
        &[A, C, D, F, G],       // 5
        &[A, C, D, E, F, G],    // 6
        &[A, B, C],             // 7
        &[A, B, C, D, E, F, G], // 8
        &[A, B, C, D, F, G],    // 9
    ];
    SEGS.get(label as usize)
        .copied()
        .ok_or_else(|| Error::range(format!("digit label {label} outside 0..=9")))
}

/// Placement of the glyph on the grid.
///
/// With `k = pairs_per_segment`, every segment is a straight run of `2k`
/// electrodes and the glyph occupies `(4k + 3) x (2k + 2)` grid cells:
/// three horizontal segments (top, middle, bottom) and four vertical ones,
/// with the corner cells left unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlyphLayout {
    /// Grid row of the glyph's top-left cell.
    pub origin_row: usize,
    /// Grid column of the glyph's top-left cell.
    pub origin_col: usize,
    /// Electrode pairs driven per lit segment.
    pub pairs_per_segment: usize,
}

impl Default for GlyphLayout {
    fn default() -> Self {
        GlyphLayout {
            origin_row: 20,
            origin_col: 28,
            pairs_per_segment: 3,
        }
    }
}

impl GlyphLayout {
    pub fn height(&self) -> usize {
        4 * self.pairs_per_segment + 3
    }

    pub fn width(&self) -> usize {
        2 * self.pairs_per_segment + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_segment == 0 {
            return Err(Error::invalid("pairs_per_segment must be >= 1"));
        }
        if self.origin_row + self.height() > GRID_SIDE || self.origin_col + self.width() > GRID_SIDE
        {
            return Err(Error::range(format!(
                "glyph of {}x{} at ({}, {}) overflows the {GRID_SIDE}x{GRID_SIDE} grid",
                self.height(),
                self.width(),
                self.origin_row,
                self.origin_col
            )));
        }
        Ok(())
    }

    /// Grid cells of one segment, ordered along the segment.
    pub fn segment_path(&self, segment: Segment) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let k = self.pairs_per_segment;
        let run = 2 * k;
        let (r0, c0) = (self.origin_row, self.origin_col);
        let right = 2 * k + 1;
        let cells: Vec<(usize, usize)> = match segment {
            Segment::A => (1..=run).map(|c| (r0, c0 + c)).collect(),
            Segment::F => (1..=run).map(|r| (r0 + r, c0)).collect(),
            Segment::B => (1..=run).map(|r| (r0 + r, c0 + right)).collect(),
            Segment::G => (1..=run).map(|c| (r0 + right, c0 + c)).collect(),
            Segment::E => (right + 1..=right + run).map(|r| (r0 + r, c0)).collect(),
            Segment::C => (right + 1..=right + run)
                .map(|r| (r0 + r, c0 + right))
                .collect(),
            Segment::D => (1..=run).map(|c| (r0 + 2 * right, c0 + c)).collect(),
        };
        Ok(cells)
    }
}

/// One stimulation electrode pair. The positive electrode carries the leading
/// phase of the biphasic pulse, the negative electrode the mirrored phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectrodePair {
    pub positive: u32,
    pub negative: u32,
}

/// Biphasic current pulse delivered to every pair of a pattern.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseParams {
    pub amplitude_ua: f64,
    /// Duration of the leading (positive) phase, microseconds.
    pub phase_pos_us: f64,
    /// Duration of the trailing (negative) phase, microseconds.
    pub phase_neg_us: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        PulseParams {
            amplitude_ua: 4.0,
            phase_pos_us: 200.0,
            phase_neg_us: 200.0,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.amplitude_ua) || !ok(self.phase_pos_us) || !ok(self.phase_neg_us) {
            return Err(Error::invalid(
                "pulse amplitude and phase durations must be positive",
            ));
        }
        Ok(())
    }

    /// Net injected charge per pulse in picocoulombs; zero for symmetric
    /// phases.
    pub fn net_charge_pc(&self) -> f64 {
        self.amplitude_ua * (self.phase_pos_us - self.phase_neg_us)
    }

    pub fn total_duration_us(&self) -> f64 {
        self.phase_pos_us + self.phase_neg_us
    }
}

/// A digit rendered as stimulation pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusPattern {
    pub label: u8,
    pub pairs: Vec<ElectrodePair>,
    pub pulse: PulseParams,
}

impl StimulusPattern {
    pub fn stimulated_channels(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .pairs
            .iter()
            .flat_map(|p| [p.positive, p.negative])
            .collect();
        out.sort_unstable();
        out
    }
}

/// Converts lit segments into electrode pairs: each segment's run of `2k`
/// electrodes becomes `k` adjacent pairs whose polarity alternates along the
/// run. Fails if any electrode would be driven twice.
pub fn segments_to_pairs(segments: &[Segment], layout: &GlyphLayout) -> Result<Vec<ElectrodePair>> {
    layout.validate()?;
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for &segment in segments {
        let path = layout.segment_path(segment)?;
        for (m, duo) in path.chunks_exact(2).enumerate() {
            let first = grid_to_channel(duo[0].0, duo[0].1)? as u32;
            let second = grid_to_channel(duo[1].0, duo[1].1)? as u32;
            for ch in [first, second] {
                if !seen.insert(ch) {
                    return Err(Error::invalid(format!(
                        "electrode {ch} assigned to more than one pair"
                    )));
                }
            }
            let pair = if m % 2 == 0 {
                ElectrodePair {
                    positive: first,
                    negative: second,
                }
            } else {
                ElectrodePair {
                    positive: second,
                    negative: first,
                }
            };
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

/// Builds the full stimulation pattern for one digit.
pub fn build_pattern(label: u8, layout: &GlyphLayout, pulse: &PulseParams) -> Result<StimulusPattern> {
    pulse.validate()?;
    let segments = digit_to_segments(label)?;
    let pairs = segments_to_pairs(segments, layout)?;
    Ok(StimulusPattern {
        label,
        pairs,
        pulse: *pulse,
    })
}

/// Builds all ten digit patterns.
pub fn build_all_patterns(layout: &GlyphLayout, pulse: &PulseParams) -> Result<Vec<StimulusPattern>> {
    (0..10).map(|d| build_pattern(d, layout, pulse)).collect()
}

/// One entry of a session schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledTrial {
    pub index: usize,
    pub label: u8,
    pub onset_s: f64,
}

/// A randomized session schedule: `repetitions` presentations of every
/// pattern, uniformly shuffled, at a constant inter-stimulus interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulationSchedule {
    pub inter_stimulus_s: f64,
    pub repetitions: usize,
    pub seed: u64,
    trials: Vec<ScheduledTrial>,
}

impl StimulationSchedule {
    pub fn trials(&self) -> &[ScheduledTrial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Total session duration: one interval per trial.
    pub fn duration_s(&self) -> f64 {
        self.trials.len() as f64 * self.inter_stimulus_s
    }
}

/// Draws the randomized trial order for one session.
pub fn build_schedule(
    patterns: &[StimulusPattern],
    repetitions: usize,
    inter_stimulus_s: f64,
    seed: u64,
) -> Result<StimulationSchedule> {
    if patterns.is_empty() {
        return Err(Error::invalid("schedule needs at least one pattern"));
    }
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    if !(inter_stimulus_s > 0.0) || !inter_stimulus_s.is_finite() {
        return Err(Error::invalid("inter_stimulus_s must be positive"));
    }
    let mut labels = BTreeSet::new();
    for p in patterns {
        if !labels.insert(p.label) {
            return Err(Error::invalid(format!("duplicate pattern label {}", p.label)));
        }
    }

    let mut order: Vec<u8> = Vec::with_capacity(patterns.len() * repetitions);
    for _ in 0..repetitions {
        order.extend(patterns.iter().map(|p| p.label));
    }
    let mut rng = rng_from_seed(seed);
    order.shuffle(&mut rng);

    let trials = order
        .into_iter()
        .enumerate()
        .map(|(index, label)| ScheduledTrial {
            index,
            label,
            onset_s: index as f64 * inter_stimulus_s,
        })
        .collect();
    Ok(StimulationSchedule {
        inter_stimulus_s,
        repetitions,
        seed,
        trials,
    })
}

// --- schedule CSV -----------------------------------------------------------

pub fn write_schedule_csv<W: Write>(w: &mut W, schedule: &StimulationSchedule) -> Result<()> {
    w.write_all(b"trial,label,onset_s\r\n")?;
    for t in schedule.trials() {
        let line = format!("{},{},{:.6}\r\n", t.index, t.label, t.onset_s);
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Reads a schedule CSV back. Interval, repetitions and seed are not stored
/// in the CSV and must be supplied from session metadata.
pub fn read_schedule_csv<R: Read>(
    r: &mut R,
    inter_stimulus_s: f64,
    repetitions: usize,
    seed: u64,
) -> Result<StimulationSchedule> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .map(|l| l.trim_end_matches('\r'))
        .ok_or_else(|| Error::format("empty schedule CSV"))?;
    if header != "trial,label,onset_s" {
        return Err(Error::format(format!("unexpected schedule header: {header}")));
    }
    let mut trials = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(format!("line {}: expected 3 fields", lineno + 2)));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad trial index", lineno + 2)))?;
        let label: u8 = fields[1]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad label", lineno + 2)))?;
        let onset_s: f64 = fields[2]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad onset", lineno + 2)))?;
        if index != trials.len() {
            return Err(Error::format(format!(
                "line {}: trial indices must be contiguous",
                lineno + 2
            )));
        }
        trials.push(ScheduledTrial {
            index,
            label,
            onset_s,
        });
    }
    Ok(StimulationSchedule {
        inter_stimulus_s,
        repetitions,
        seed,
        trials,
    })
}

pub fn write_schedule_csv_file(path: &Path, schedule: &StimulationSchedule) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_schedule_csv(&mut w, schedule)?;
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv_file(
    path: &Path,
    inter_stimulus_s: f64,
    repetitions: usize,
    seed: u64,
) -> Result<StimulationSchedule> {
    let mut r = BufReader::new(File::open(path)?);
    read_schedule_csv(&mut r, inter_stimulus_s, repetitions, seed)
}
