//! Verification scoring and error rates.
//!
//! Scores are "higher is more genuine". At threshold θ a comparison is
//! accepted when `score ≥ θ`, so `FAR(θ) = #{impostor ≥ θ} / n_impostor` and
//! `FRR(θ) = #{genuine < θ} / n_genuine`. Thresholds are the distinct scores
//! plus `+∞` (accept nothing).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::TrainedModel;

pub const FAR_TARGETS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        ScoreSet { genuine, impostor }
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::Metric(format!(
                "need genuine and impostor scores, got {} and {}",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| !s.is_finite()) {
            return Err(Error::Metric("non-finite score".into()));
        }
        Ok(())
    }
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR and FRR at every distinct score (ascending) and finally at `+∞`.
pub fn sweep(s: &ScoreSet) -> Result<Vec<SweepPoint>> {
    s.check()?;
    let mut g = s.genuine.clone();
    let mut imp = s.impostor.clone();
    g.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&imp).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (ng, ni) = (g.len() as f64, imp.len() as f64);
    let (mut gi, mut ii) = (0, 0);
    let mut out = Vec::with_capacity(thresholds.len() + 1);
    for &th in &thresholds {
        while gi < g.len() && g[gi] < th {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] < th {
            ii += 1;
        }
        out.push(SweepPoint {
            threshold: th,
            far: (imp.len() - ii) as f64 / ni,
            frr: gi as f64 / ng,
        });
    }
    out.push(SweepPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(out)
}

/// Equal error rate from a sweep: the first point where `FAR − FRR ≤ 0`,
/// linearly interpolated with its predecessor when the difference is not
/// exactly zero. Returns `(eer, threshold)`.
pub fn eer_from_sweep(points: &[SweepPoint]) -> Result<(f64, f64)> {
    let j = points
        .iter()
        .position(|p| p.far - p.frr <= 0.0)
        .ok_or_else(|| Error::Metric("sweep never reaches FAR ≤ FRR".into()))?;
    let b = points[j];
    if b.far == b.frr || j == 0 {
        return Ok((b.far, b.threshold));
    }
    let a = points[j - 1];
    let (da, db) = (a.far - a.frr, b.far - b.frr);
    let alpha = da / (da - db);
    let rate = a.far + alpha * (b.far - a.far);
    let threshold = if b.threshold.is_finite() {
        a.threshold + alpha * (b.threshold - a.threshold)
    } else {
        a.threshold
    };
    Ok((rate, threshold))
}

pub fn eer(s: &ScoreSet) -> Result<(f64, f64)> {
    eer_from_sweep(&sweep(s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFar {
    pub target: f64,
    pub frr: f64,
    pub threshold: f64,
    /// Fewer than `1/target` impostor scores: the target is below the
    /// resolution of the set and `frr` is reported as 1.
    pub insufficient: bool,
}

/// FRR at the smallest threshold whose FAR is at most each target.
pub fn frr_at_far(s: &ScoreSet, targets: &[f64]) -> Result<Vec<FrrAtFar>> {
    for &t in targets {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Argument(format!("FAR target {t} outside (0, 1)")));
        }
    }
    let points = sweep(s)?;
    let resolution = 1.0 / s.impostor.len() as f64;
    Ok(targets
        .iter()
        .map(|&target| {
            if target < resolution {
                return FrrAtFar {
                    target,
                    frr: 1.0,
                    threshold: f64::INFINITY,
                    insufficient: true,
                };
            }
            let p = points.iter().find(|p| p.far <= target).expect("+∞ has FAR 0");
            FrrAtFar {
                target,
                frr: p.frr,
                threshold: p.threshold,
                insufficient: false,
            }
        })
        .collect())
}

/// Writes `threshold,far,frr` rows of the sweep (last threshold `inf`).
pub fn write_roc<W: Write>(s: &ScoreSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "far", "frr"])?;
    for p in sweep(s)? {
        w.write_record([p.threshold.to_string(), p.far.to_string(), p.frr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn roc_export(s: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    write_roc(s, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_roc(path: impl AsRef<Path>) -> Result<Vec<SweepPoint>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad ROC row {:?}", row)))
        };
        out.push(SweepPoint {
            threshold: num(0)?,
            far: num(1)?,
            frr: num(2)?,
        });
    }
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Per-subject mean of training-split embeddings, in `subjects` order.
/// `None` for a subject without training samples.
pub fn templates(embeddings: &[Vec<f64>], labels: &[usize], n_subjects: usize) -> Vec<Option<Vec<f64>>> {
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; n_subjects];
    for (e, &l) in embeddings.iter().zip(labels) {
        let slot = sums[l].get_or_insert_with(|| (vec![0.0; e.len()], 0));
        slot.0.iter_mut().zip(e).for_each(|(s, v)| *s += v);
        slot.1 += 1;
    }
    sums.into_iter()
        .map(|s| s.map(|(v, n)| v.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

/// Cosine scores of every probe against every template: same subject →
/// genuine, otherwise impostor.
pub fn score_against_templates(probes: &[Vec<f64>], probe_labels: &[usize], templates: &[Vec<f64>]) -> ScoreSet {
    let mut s = ScoreSet::default();
    for (p, &l) in probes.iter().zip(probe_labels) {
        for (k, t) in templates.iter().enumerate() {
            let score = cosine(p, t);
            if k == l {
                s.genuine.push(score);
            } else {
                s.impostor.push(score);
            }
        }
    }
    s
}

/// Enrols every subject from its training-split windows and scores every
/// test window against all templates.
pub fn score_verification(tm: &TrainedModel, ds: &Dataset) -> Result<ScoreSet> {
    let train = ds.indices(Split::Train);
    let test = ds.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Protocol("test split is empty".into()));
    }
    let label = |i: usize| -> Option<usize> { tm.subjects.iter().position(|s| *s == ds.samples[i].subject_id) };
    let unknown: Vec<&str> = train
        .iter()
        .chain(&test)
        .filter(|&&i| label(i).is_none())
        .map(|&i| ds.samples[i].subject_id.as_str())
        .collect();
    if !unknown.is_empty() {
        let mut u = unknown;
        u.dedup();
        return Err(Error::Protocol(format!("subjects not known to the model: {}", u.join(", "))));
    }
    let train_labels: Vec<usize> = train.iter().map(|&i| label(i).unwrap()).collect();
    let test_labels: Vec<usize> = test.iter().map(|&i| label(i).unwrap()).collect();
    let tmpl = templates(&tm.embeddings(ds, &train)?, &train_labels, tm.subjects.len());
    let mut missing: Vec<&str> = test_labels
        .iter()
        .filter(|&&l| tmpl[l].is_none())
        .map(|&l| tm.subjects[l].as_str())
        .collect();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::Protocol(format!(
            "test subjects without enrollment data: {}",
            missing.join(", ")
        )));
    }
    // Only enrolled subjects get a template to be compared against.
    let enrolled: Vec<usize> = (0..tmpl.len()).filter(|&k| tmpl[k].is_some()).collect();
    let dense: Vec<Vec<f64>> = enrolled.iter().map(|&k| tmpl[k].clone().unwrap()).collect();
    let probe_labels: Vec<usize> = test_labels
        .iter()
        .map(|l| enrolled.iter().position(|k| k == l).unwrap())
        .collect();
    Ok(score_against_templates(&tm.embeddings(ds, &test)?, &probe_labels, &dense))
}

/// Summary metrics of a score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub eer: f64,
    pub eer_threshold: f64,
    pub frr_at_far: Vec<FrrAtFar>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl Report {
    pub fn from_scores(s: &ScoreSet) -> Result<Self> {
        let (eer, eer_threshold) = eer(s)?;
        Ok(Report {
            eer,
            eer_threshold,
            frr_at_far: frr_at_far(s, &FAR_TARGETS)?,
            n_genuine: s.genuine.len(),
            n_impostor: s.impostor.len(),
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eer = {}", self.eer);
        let _ = writeln!(out, "eer_threshold = {}", self.eer_threshold);
        for f in &self.frr_at_far {
            let key = format!("frr@{:e}", f.target);
            let _ = writeln!(out, "{key} = {}", f.frr);
            if f.insufficient {
                let _ = writeln!(out, "{key}.insufficient_data = true");
            }
        }
        let _ = writeln!(out, "n_genuine = {}", self.n_genuine);
        let _ = writeln!(out, "n_impostor = {}", self.n_impostor);
        out
    }
}
