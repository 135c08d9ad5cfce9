//! Gaze coordinates to fast/slow velocity channels.
//!
//! Velocities are difference quotients (first sample 0, anything touching a
//! NaN coordinate 0). The fast channel is the per-recording z-score of each
//! axis with samples slower than `v_min` set to `Z(0)`; the slow channel is
//! `tanh(c·δ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamped 2-D gaze samples of one subject in one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeRecording {
    pub subject_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GazeRecording {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.t.len() || self.y.len() != self.t.len() {
            return Err(Error::Data(format!(
                "recording {}/{}: t, x, y lengths {} {} {}",
                self.subject_id,
                self.session_id,
                self.t.len(),
                self.x.len(),
                self.y.len()
            )));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "recording {}/{}: timestamps not strictly increasing",
                self.subject_id, self.session_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub v_min: f64,
    pub c: f64,
    pub window_length: usize,
    pub window_stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            v_min: 40.0,
            c: 0.02,
            window_length: 1000,
            window_stride: 500,
        }
    }
}

/// One window of both channels. `fast` and `slow` are `2×W` row-major
/// (row 0 = x axis, row 1 = y axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedSample {
    pub fast: Vec<f64>,
    pub slow: Vec<f64>,
    pub width: usize,
    pub subject_id: String,
    pub session_id: String,
    pub window_index: usize,
}

/// Full-length channels of one recording, each `[x-axis, y-axis]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub fast: [Vec<f64>; 2],
    pub slow: [Vec<f64>; 2],
    /// Per axis: the series had zero variance and σ = 1 was used.
    pub degenerate: [bool; 2],
}

impl Channels {
    pub fn len(&self) -> usize {
        self.fast[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.fast[0].is_empty()
    }
}

/// `δ(i) = (p(i) − p(i−1)) / (t(i) − t(i−1))`, `δ(0) = 0`, NaN-touching → 0.
pub fn velocities(rec: &GazeRecording) -> Result<(Vec<f64>, Vec<f64>)> {
    if rec.len() < 2 {
        return Err(Error::InputTooShort(format!(
            "recording {}/{} has {} samples, need at least 2",
            rec.subject_id,
            rec.session_id,
            rec.len()
        )));
    }
    let diff = |p: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; p.len()];
        for i in 1..p.len() {
            let v = (p[i] - p[i - 1]) / (rec.t[i] - rec.t[i - 1]);
            d[i] = if v.is_finite() { v } else { 0.0 };
        }
        d
    };
    Ok((diff(&rec.x), diff(&rec.y)))
}

/// Population mean and standard deviation.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Largest `f64` below 1. `tanh` rounds to ±1 beyond |x| ≈ 19, so the slow
/// channel is clamped here to stay strictly inside (-1, 1).
pub const SLOW_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

/// Positions whose speed `√(δx² + δy²)` is below `v_min`.
pub fn truncated_positions(dx: &[f64], dy: &[f64], v_min: f64) -> Vec<usize> {
    dx.iter()
        .zip(dy)
        .enumerate()
        .filter(|(_, (a, b))| a.hypot(**b) < v_min)
        .map(|(i, _)| i)
        .collect()
}

pub fn split_fast_slow(dx: &[f64], dy: &[f64], v_min: f64, c: f64) -> Result<Channels> {
    if dx.len() != dy.len() {
        return Err(Error::shape("split_fast_slow", &[dx.len()], &[dy.len()]));
    }
    if dx.is_empty() {
        return Err(Error::InputTooShort("empty velocity series".into()));
    }
    if dx.iter().chain(dy).any(|v| !v.is_finite()) {
        return Err(Error::Data("velocity series contains non-finite values".into()));
    }
    let slow_mask: Vec<bool> = dx.iter().zip(dy).map(|(a, b)| a.hypot(*b) < v_min).collect();
    let mut degenerate = [false; 2];
    let mut fast: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (axis, series) in [dx, dy].into_iter().enumerate() {
        let (mean, mut sd) = moments(series);
        if sd == 0.0 {
            log::warn!("degenerate velocity series on axis {axis}: zero variance, using σ = 1");
            degenerate[axis] = true;
            sd = 1.0;
        }
        let z0 = -mean / sd;
        fast[axis] = series
            .iter()
            .zip(&slow_mask)
            .map(|(v, &cut)| if cut { z0 } else { (v - mean) / sd })
            .collect();
    }
    let squash = |v: &f64| (c * v).tanh().clamp(-SLOW_BOUND, SLOW_BOUND);
    let slow = [dx.iter().map(squash).collect(), dy.iter().map(squash).collect()];
    Ok(Channels { fast, slow, degenerate })
}

/// Window offsets `0, stride, 2·stride, …` with the window fully inside `total`.
pub fn window_offsets(total: usize, length: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || length == 0 {
        return Err(Error::Config("window length and stride must be ≥ 1".into()));
    }
    if length > total {
        log::warn!("series of {total} samples is shorter than one window ({length}); no windows");
        return Ok(Vec::new());
    }
    Ok((0..=total - length).step_by(stride).collect())
}

/// Cuts both channels into windows.
pub fn window(ch: &Channels, length: usize, stride: usize, subject_id: &str, session_id: &str) -> Result<Vec<PreprocessedSample>> {
    let offsets = window_offsets(ch.len(), length, stride)?;
    Ok(offsets
        .into_iter()
        .enumerate()
        .map(|(index, o)| {
            let cut = |pair: &[Vec<f64>; 2]| -> Vec<f64> {
                let mut v = Vec::with_capacity(2 * length);
                v.extend_from_slice(&pair[0][o..o + length]);
                v.extend_from_slice(&pair[1][o..o + length]);
                v
            };
            PreprocessedSample {
                fast: cut(&ch.fast),
                slow: cut(&ch.slow),
                width: length,
                subject_id: subject_id.to_string(),
                session_id: session_id.to_string(),
                window_index: index,
            }
        })
        .collect())
}

/// Velocities, channel split and windowing of one recording.
pub fn preprocess_recording(rec: &GazeRecording, cfg: &PreprocessConfig) -> Result<Vec<PreprocessedSample>> {
    let (dx, dy) = velocities(rec)?;
    let ch = split_fast_slow(&dx, &dy, cfg.v_min, cfg.c)?;
    window(&ch, cfg.window_length, cfg.window_stride, &rec.subject_id, &rec.session_id)
}
