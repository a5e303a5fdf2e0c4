//! Segmentation and case-level classification metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridShape, Mask};

/// Dice similarity `2|A ∩ B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.shape().ensure_same(b.shape())?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok((2 * both) as f64 / (na + nb) as f64)
}

/// Symmetric Hausdorff distance in mm between the voxel centers of the two
/// foregrounds.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    let (ab, ba) = directed_distances(a, b)?;
    Ok(ab.iter().chain(&ba).copied().fold(0.0, f64::max))
}

/// Robust variant: the larger of the two directed distances' `q`-th
/// percentile (nearest rank), e.g. `q = 95` for HD95.
pub fn hausdorff_percentile(a: &Mask, b: &Mask, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::InvalidParam(format!("percentile must lie in (0, 100], got {q}")));
    }
    let (ab, ba) = directed_distances(a, b)?;
    Ok(nearest_rank(ab, q).max(nearest_rank(ba, q)))
}

fn nearest_rank(mut d: Vec<f64>, q: f64) -> f64 {
    d.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * d.len() as f64).ceil() as usize;
    d[rank.clamp(1, d.len()) - 1]
}

/// Per-voxel distances from each foreground voxel of `a` to the foreground of
/// `b`, and vice versa.
fn directed_distances(a: &Mask, b: &Mask) -> Result<(Vec<f64>, Vec<f64>)> {
    a.shape().ensure_same(b.shape())?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedMetric("Hausdorff distance needs two non-empty masks".into()));
    }
    Ok((nearest_distances(a, b), nearest_distances(b, a)))
}

fn nearest_distances(from: &Mask, to: &Mask) -> Vec<f64> {
    let shape = *from.shape();
    let border = boundary(to);
    let points: Vec<usize> = (0..shape.len()).filter(|&i| from.data()[i]).collect();
    points
        .par_iter()
        .map(|&i| {
            if to.data()[i] {
                return 0.0;
            }
            border.iter().map(|&j| sq_dist(&shape, i, j)).fold(f64::INFINITY, f64::min).sqrt()
        })
        .collect()
}

fn sq_dist(shape: &GridShape, i: usize, j: usize) -> f64 {
    let (p, q, s) = (shape.coords(i), shape.coords(j), shape.spacing());
    (0..3)
        .map(|a| {
            let d = (p[a] as f64 - q[a] as f64) * s[a];
            d * d
        })
        .sum()
}

/// Foreground voxels with at least one in-grid background face neighbor.
///
/// The nearest foreground voxel to any point outside the mask is always one
/// of these: stepping from an interior voxel toward the point along an axis
/// where they differ stays in the foreground and gets strictly closer.
fn boundary(m: &Mask) -> Vec<usize> {
    let shape = *m.shape();
    let d = shape.dims();
    (0..shape.len())
        .filter(|&i| {
            if !m.data()[i] {
                return false;
            }
            let c = shape.coords(i);
            (0..3).any(|a| {
                let mut lo = c;
                let mut hi = c;
                let below = c[a] > 0 && {
                    lo[a] -= 1;
                    !m.data()[shape.index(lo[0], lo[1], lo[2])]
                };
                let above = c[a] + 1 < d[a] && {
                    hi[a] += 1;
                    !m.data()[shape.index(hi[0], hi[1], hi[2])]
                };
                below || above
            })
        })
        .collect()
}

/// One case of a response-prediction cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseOutcome {
    pub case_id: String,
    /// Predicted probability of the positive class.
    pub score: f64,
    /// `true` for the positive class.
    pub label: bool,
    /// Set when the case's segmentation was empty and its score was forced to 0.
    pub empty_segmentation: bool,
}

impl CaseOutcome {
    pub fn new(case_id: impl Into<String>, score: f64, label: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidValue(format!("score must lie in [0, 1], got {score}")));
        }
        Ok(Self { case_id: case_id.into(), score, label, empty_segmentation: false })
    }
}

/// Cases whose segmentation is empty are scored as negative.
pub fn apply_empty_fallback(seg: &Mask, outcome: &CaseOutcome) -> CaseOutcome {
    if seg.is_empty() {
        CaseOutcome { score: 0.0, empty_segmentation: true, ..outcome.clone() }
    } else {
        outcome.clone()
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties counting
/// one half.
pub fn auc(outcomes: &[CaseOutcome]) -> Result<f64> {
    if let Some(o) = outcomes.iter().find(|o| !o.score.is_finite()) {
        return Err(Error::InvalidValue(format!("case {} has non-finite score", o.case_id)));
    }
    let n_pos = outcomes.iter().filter(|o| o.label).count() as u64;
    let n_neg = outcomes.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs at least one positive and one negative case".into()));
    }
    let mut order: Vec<&CaseOutcome> = outcomes.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));

    // twice the rank sum of positives, with tied groups sharing their mean rank
    let mut twice_rank_sum = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        // ranks i+1..=j, mean (i + 1 + j) / 2
        let pos_in_group = order[i..j].iter().filter(|o| o.label).count() as u64;
        twice_rank_sum += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// 2×2 table of thresholded predictions against labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionTable {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionTable {
    /// A case is predicted positive iff `score >= threshold`.
    pub fn from_outcomes(outcomes: &[CaseOutcome], threshold: f64) -> Self {
        let mut t = ConfusionTable::default();
        for o in outcomes {
            match (o.score >= threshold, o.label) {
                (true, true) => t.tp += 1,
                (false, false) => t.tn += 1,
                (true, false) => t.fp += 1,
                (false, true) => t.fn_ += 1,
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Cohen's kappa; 0 when chance agreement is already perfect.
    pub fn kappa(&self) -> f64 {
        let n = self.total() as i128;
        let (tp, tn, fp, fn_) = (self.tp as i128, self.tn as i128, self.fp as i128, self.fn_ as i128);
        // everything scaled by n²
        let expected = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
        let denom = n * n - expected;
        if denom == 0 {
            return 0.0;
        }
        (n * (tp + tn) - expected) as f64 / denom as f64
    }
}

/// Cohen's kappa between `score >= threshold` and the labels.
pub fn kappa(outcomes: &[CaseOutcome], threshold: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::UndefinedMetric("kappa needs at least one case".into()));
    }
    Ok(ConfusionTable::from_outcomes(outcomes, threshold).kappa())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: Option<f64>,
    pub hausdorff_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub auc: Option<f64>,
    pub kappa: Option<f64>,
}

impl MetricReport {
    /// Flat `key=value` lines for the present metrics, formatted with `fmt`.
    pub fn to_key_values(&self, fmt: impl Fn(f64) -> String) -> String {
        let fields = [
            ("dice", self.dice),
            ("hausdorff_mm", self.hausdorff_mm),
            ("hd95_mm", self.hd95_mm),
            ("auc", self.auc),
            ("kappa", self.kappa),
        ];
        fields
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={}\n", fmt(v))))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeRecord {
    case_id: String,
    score: f64,
    label: u8,
    empty_seg: u8,
}

fn flag(v: u8, what: &str, case: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::InvalidValue(format!("case {case}: {what} must be 0 or 1, got {v}"))),
    }
}

/// Reads `case_id,score,label,empty_seg` rows. Rows flagged `empty_seg=1` have
/// their score forced to 0.
pub fn read_outcomes(path: impl AsRef<Path>) -> Result<Vec<CaseOutcome>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<OutcomeRecord>() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let mut o = CaseOutcome::new(rec.case_id.clone(), rec.score, flag(rec.label, "label", &rec.case_id)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if flag(rec.empty_seg, "empty_seg", &rec.case_id)? {
            o.score = 0.0;
            o.empty_segmentation = true;
        }
        out.push(o);
    }
    Ok(out)
}

pub fn write_outcomes(path: impl AsRef<Path>, outcomes: &[CaseOutcome]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for o in outcomes {
        w.serialize(OutcomeRecord {
            case_id: o.case_id.clone(),
            score: o.score,
            label: o.label as u8,
            empty_seg: o.empty_segmentation as u8,
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
