//! CSV ingestion, the synthetic gaze generator and the windowed dataset.
//!
//! CSV schema: header row, columns `t` (seconds), `x`, `y`, `subject`,
//! `session`. Non-numeric `x`/`y` cells read as NaN.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{preprocess_recording, GazeRecording, PreprocessConfig, PreprocessedSample};
use crate::tensor::Tensor;

/// Names of the five CSV columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub t: String,
    pub x: String,
    pub y: String,
    pub subject: String,
    pub session: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            t: "t".into(),
            x: "x".into(),
            y: "y".into(),
            subject: "subject".into(),
            session: "session".into(),
        }
    }
}

fn parse_coord(cell: &str) -> f64 {
    cell.trim().parse::<f64>().unwrap_or(f64::NAN)
}

/// Sampling rate from the median timestamp spacing; 0 with fewer than two
/// samples.
pub fn estimate_rate(t: &[f64]) -> f64 {
    let mut dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if dt.is_empty() {
        return 0.0;
    }
    dt.sort_by(f64::total_cmp);
    1.0 / dt[dt.len() / 2]
}

/// Reads recordings grouped by (subject, session) in order of first
/// appearance, each sorted by time.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnMap) -> Result<Vec<GazeRecording>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof) => {
            return Ok(Vec::new());
        }
        Err(e) => return Err(e.into()),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ct, cx, cy, csub, cses) = (col(&schema.t)?, col(&schema.x)?, col(&schema.y)?, col(&schema.subject)?, col(&schema.session)?);

    let mut groups: IndexMap<(String, String), Vec<(f64, f64, f64)>> = IndexMap::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let t: f64 = field(ct)
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("row {}: timestamp `{}` is not a number", line + 2, field(ct))))?;
        if !t.is_finite() {
            return Err(Error::Data(format!("row {}: non-finite timestamp", line + 2)));
        }
        groups
            .entry((field(csub).to_string(), field(cses).to_string()))
            .or_default()
            .push((t, parse_coord(field(cx)), parse_coord(field(cy))));
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((subject_id, session_id), mut rows) in groups {
        if rows.windows(2).any(|w| w[1].0 < w[0].0) {
            log::warn!("recording {subject_id}/{session_id}: timestamps out of order, sorting");
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        if rows.windows(2).any(|w| w[1].0 == w[0].0) {
            return Err(Error::Data(format!("recording {subject_id}/{session_id}: duplicate timestamps")));
        }
        let t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        out.push(GazeRecording {
            subject_id,
            session_id,
            sample_rate_hz: estimate_rate(&t),
            t,
            x: rows.iter().map(|r| r.1).collect(),
            y: rows.iter().map(|r| r.2).collect(),
        });
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<Vec<GazeRecording>> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn write_csv<W: Write>(writer: W, recordings: &[GazeRecording]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "x", "y", "subject", "session"])?;
    for r in recordings {
        r.validate()?;
        for i in 0..r.len() {
            w.write_record([
                r.t[i].to_string(),
                r.x[i].to_string(),
                r.y[i].to_string(),
                r.subject_id.clone(),
                r.session_id.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, recordings: &[GazeRecording]) -> Result<()> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), recordings)
}

/// Kinematic parameters of one synthetic subject. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Peak saccade velocity, °/s.
    pub peak_velocity: f64,
    pub saccade_duration_ms: f64,
    pub fixation_mean_ms: f64,
    /// Tremor amplitude, degrees.
    pub tremor_amplitude: f64,
    pub tremor_frequency_hz: f64,
    pub seed: u64,
}

pub const PEAK_VELOCITY_RANGE: (f64, f64) = (200.0, 600.0);
pub const SACCADE_DURATION_RANGE: (f64, f64) = (30.0, 70.0);
pub const FIXATION_MEAN_RANGE: (f64, f64) = (100.0, 400.0);
pub const TREMOR_AMPLITUDE_RANGE: (f64, f64) = (0.05, 0.3);
pub const TREMOR_FREQUENCY_RANGE: (f64, f64) = (2.0, 12.0);
/// Standard deviation of the additive position noise, degrees.
pub const POSITION_NOISE: f64 = 0.01;
/// Half-width of the square region saccade targets are drawn from, degrees.
pub const FIELD_HALF_WIDTH: f64 = 15.0;
pub const DEFAULT_DIFFICULTY: f64 = 0.3;

/// `n` profiles whose fields are spread evenly over their ranges (each
/// field independently shuffled across subjects), then pulled towards the
/// range midpoint by `difficulty ∈ [0, 1]` (0 = full spread, 1 = identical).
pub fn spread_profiles(n: usize, difficulty: f64, seed: u64) -> Result<Vec<SubjectProfile>> {
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::Config(format!("difficulty {difficulty} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let mid = 0.5 * (lo + hi);
        let mut q: Vec<f64> = (0..n)
            .map(|i| {
                let v = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
                mid + (1.0 - difficulty) * (v - mid)
            })
            .collect();
        q.shuffle(&mut rng);
        q
    };
    let peak = field(PEAK_VELOCITY_RANGE);
    let dur = field(SACCADE_DURATION_RANGE);
    let fix = field(FIXATION_MEAN_RANGE);
    let amp = field(TREMOR_AMPLITUDE_RANGE);
    let freq = field(TREMOR_FREQUENCY_RANGE);
    Ok((0..n)
        .map(|i| SubjectProfile {
            subject_id: format!("S{:02}", i + 1),
            peak_velocity: peak[i],
            saccade_duration_ms: dur[i],
            fixation_mean_ms: fix[i],
            tremor_amplitude: amp[i],
            tremor_frequency_hz: freq[i],
            seed: rng.random(),
        })
        .collect())
}

/// Minimum-jerk displacement fraction at normalised time `s ∈ [0, 1]`.
fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

struct Saccade {
    start: f64,
    duration: f64,
    from: (f64, f64),
    to: (f64, f64),
}

/// Gaze path of one recording: fixations alternating with minimum-jerk
/// saccades, plus a tremor sinusoid and white position noise.
fn synthesize_one(p: &SubjectProfile, session_id: String, n: usize, rate_hz: f64, rng: &mut ChaCha8Rng) -> GazeRecording {
    let duration = n as f64 / rate_hz;
    let mut saccades = Vec::new();
    let mut pos = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let mut clock = 0.0;
    while clock < duration {
        clock += p.fixation_mean_ms * rng.random_range(0.8..1.2) / 1000.0;
        let dur = p.saccade_duration_ms * rng.random_range(0.85..1.15) / 1000.0;
        // Minimum-jerk peak velocity is 1.875·D/T.
        let amplitude = p.peak_velocity * dur / 1.875;
        let target = (
            rng.random_range(-FIELD_HALF_WIDTH..FIELD_HALF_WIDTH),
            rng.random_range(-FIELD_HALF_WIDTH..FIELD_HALF_WIDTH),
        );
        let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
        let norm = dx.hypot(dy).max(1e-9);
        let to = (pos.0 + amplitude * dx / norm, pos.1 + amplitude * dy / norm);
        saccades.push(Saccade {
            start: clock,
            duration: dur,
            from: pos,
            to,
        });
        pos = to;
        clock += dur;
    }

    let phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, POSITION_NOISE).expect("positive σ");
    let w = 2.0 * PI * p.tremor_frequency_hz;
    let mut t = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut k = 0;
    let mut base = saccades.first().map_or((0.0, 0.0), |s| s.from);
    for i in 0..n {
        let ti = i as f64 / rate_hz;
        while k < saccades.len() && saccades[k].start + saccades[k].duration <= ti {
            base = saccades[k].to;
            k += 1;
        }
        let (bx, by) = match saccades.get(k) {
            Some(s) if ti > s.start => {
                let f = min_jerk((ti - s.start) / s.duration);
                (s.from.0 + f * (s.to.0 - s.from.0), s.from.1 + f * (s.to.1 - s.from.1))
            }
            _ => base,
        };
        t.push(ti);
        x.push(bx + p.tremor_amplitude * (w * ti + phase.0).sin() + noise.sample(rng));
        y.push(by + p.tremor_amplitude * (w * ti + phase.1).sin() + noise.sample(rng));
    }
    GazeRecording {
        subject_id: p.subject_id.clone(),
        session_id,
        sample_rate_hz: rate_hz,
        t,
        x,
        y,
    }
}

/// One recording per (subject, session), subjects in profile order and
/// sessions `1..=sessions`. Every recording has `round(duration·rate)`
/// samples.
pub fn synthesize(profiles: &[SubjectProfile], sessions: usize, duration_s: f64, rate_hz: f64, seed: u64) -> Result<Vec<GazeRecording>> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) || !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Argument(format!(
            "rate ({rate_hz}) and duration ({duration_s}) must be positive"
        )));
    }
    let n = (duration_s * rate_hz).round() as usize;
    let mut out = Vec::with_capacity(profiles.len() * sessions);
    for p in profiles {
        for s in 1..=sessions {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ p.seed.rotate_left(17) ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            out.push(synthesize_one(p, s.to_string(), n, rate_hz, &mut rng));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Windowed samples with subject labels. The first session of each subject
/// (in order of appearance) is the training split, the rest is test.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<PreprocessedSample>,
    pub subjects: Vec<String>,
    pub split: Vec<Split>,
    pub preprocess: PreprocessConfig,
}

impl Dataset {
    pub fn from_recordings(recordings: &[GazeRecording], cfg: &PreprocessConfig) -> Result<Self> {
        let mut subjects: Vec<String> = Vec::new();
        let mut first_session: HashMap<&str, &str> = HashMap::new();
        let mut samples = Vec::new();
        let mut split = Vec::new();
        for rec in recordings {
            rec.validate()?;
            if !subjects.contains(&rec.subject_id) {
                subjects.push(rec.subject_id.clone());
            }
            let first = *first_session.entry(&rec.subject_id).or_insert(&rec.session_id);
            let tag = if first == rec.session_id { Split::Train } else { Split::Test };
            for s in preprocess_recording(rec, cfg)? {
                samples.push(s);
                split.push(tag);
            }
        }
        Ok(Dataset {
            samples,
            subjects,
            split,
            preprocess: *cfg,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.subjects.iter().position(|s| *s == self.samples[i].subject_id)
    }

    /// Fast and slow tensors `[B, 2, W]` for the given samples.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let w = idx.first().map_or(0, |&i| self.samples[i].width);
        let mut fast = Vec::with_capacity(idx.len() * 2 * w);
        let mut slow = Vec::with_capacity(idx.len() * 2 * w);
        for &i in idx {
            let s = &self.samples[i];
            if s.width != w {
                return Err(Error::Data("samples in one batch have different widths".into()));
            }
            fast.extend_from_slice(&s.fast);
            slow.extend_from_slice(&s.slow);
        }
        Ok((
            Tensor::from_vec(&[idx.len(), 2, w], fast)?,
            Tensor::from_vec(&[idx.len(), 2, w], slow)?,
        ))
    }
}
