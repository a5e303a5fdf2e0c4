//! Segmentation losses with analytic gradients.
//!
//! Every loss reduces over all voxels of all cases in a batch. Gradients are
//! taken with respect to the predicted probabilities and derived by the
//! quotient rule over the global sums; [`grad_check`] compares them against
//! central differences.
//!
//! The weighted lesion Tversky (WLT) loss is
//!
//! ```text
//! L = -(eps + sum TP*W) / (eps + sum TP + alpha * sum FP + beta * sum FN*W)
//! ```
//!
//! with `TP = p*q`, `FP = (1-p)*q`, `FN = p*(1-q)` for ground truth `p` and
//! prediction `q`, and `W` the lesion weight map. Unlike the Tversky loss it
//! is not written as `1 - index`: its range is roughly `[-w_max, 0]` and the
//! perfect score under unit weights is `-1`. Only the numerator weights TP;
//! [`TpWeighting::Both`] weights the denominator TP as well.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::reduce;
use crate::volume::{Mask, Volume};
use crate::weighting::{build_weight_map_with_units, VolumeUnits, WeightCurveParams, WeightMap};

pub const DEFAULT_CE_CLAMP: f64 = 1e-7;
pub const DEFAULT_WLT_SMOOTH: f64 = 1e-6;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TverskyParams {
    /// False-positive coefficient.
    pub alpha: f64,
    /// False-negative coefficient.
    pub beta: f64,
    pub smooth: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 1.0, smooth: 1.0 }
    }
}

impl TverskyParams {
    /// Defaults with the small smoothing constant used by the WLT loss.
    pub fn wlt_default() -> Self {
        Self { smooth: DEFAULT_WLT_SMOOTH, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.smooth.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0
            && self.smooth > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!(
                "Tversky parameters need alpha, beta >= 0, alpha + beta > 0, smooth > 0: {self:?}"
            )))
        }
    }
}

/// Which true-positive sums the lesion weights multiply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpWeighting {
    /// Weighted TP in the numerator, plain TP in the denominator.
    #[default]
    Numerator,
    Both,
}

impl FromStr for TpWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numerator" => Ok(TpWeighting::Numerator),
            "both" => Ok(TpWeighting::Both),
            _ => Err(Error::InvalidParam(format!("unknown TP weighting {s:?} (expected numerator or both)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedParams {
    /// Cross-entropy share; the WLT loss gets `1 - lambda`.
    pub lambda: f64,
    pub tversky: TverskyParams,
    pub curve: WeightCurveParams,
    pub connectivity: Connectivity,
    pub units: VolumeUnits,
    pub tp_weighting: TpWeighting,
    pub ce_clamp: f64,
}

impl Default for CombinedParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tversky: TverskyParams::wlt_default(),
            curve: WeightCurveParams::default(),
            connectivity: Connectivity::default(),
            units: VolumeUnits::default(),
            tp_weighting: TpWeighting::default(),
            ce_clamp: DEFAULT_CE_CLAMP,
        }
    }
}

impl CombinedParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParam(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        self.tversky.validate()?;
        self.curve.validate()?;
        validate_clamp(self.ce_clamp)
    }
}

fn validate_clamp(clamp: f64) -> Result<()> {
    if clamp > 0.0 && clamp < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("cross-entropy clamp must lie in (0, 0.5), got {clamp}")))
    }
}

/// Loss value for one case, with the gradient w.r.t. the prediction if requested.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub gradient: Option<Volume>,
}

/// Loss value for a batch, with one gradient volume per case if requested.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLossReport {
    pub value: f64,
    pub gradients: Option<Vec<Volume>>,
}

impl BatchLossReport {
    fn single(self) -> LossReport {
        LossReport { value: self.value, gradient: self.gradients.map(|mut g| g.remove(0)) }
    }
}

fn check_batch(gt: &[Mask], pred: &[Volume]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    if gt.len() != pred.len() {
        return Err(Error::InvalidParam(format!("{} ground-truth cases but {} predictions", gt.len(), pred.len())));
    }
    for (g, q) in gt.iter().zip(pred) {
        g.shape().ensure_same(q.shape())?;
        q.ensure_probability()?;
    }
    Ok(())
}

fn check_weights(gt: &[Mask], omega: &[WeightMap]) -> Result<()> {
    if omega.len() != gt.len() {
        return Err(Error::InvalidParam(format!("{} ground-truth cases but {} weight maps", gt.len(), omega.len())));
    }
    for (g, w) in gt.iter().zip(omega) {
        g.shape().ensure_same(w.shape())?;
    }
    Ok(())
}

/// Sum over the batch of per-voxel terms `f(case, voxel)`; each case is
/// reduced pairwise, then the per-case totals are.
fn batch_sum<F>(sizes: &[usize], f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let totals: Vec<f64> = sizes.iter().enumerate().map(|(c, &n)| reduce::sum_by(n, |i| f(c, i))).collect();
    reduce::sum(&totals)
}

fn gradients<F>(pred: &[Volume], f: F) -> Vec<Volume>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    pred.iter()
        .enumerate()
        .map(|(c, q)| {
            let data: Vec<f64> = (0..q.data().len()).into_par_iter().map(|i| f(c, i)).collect();
            Volume::new(*q.shape(), data).expect("finite gradient")
        })
        .collect()
}

/// Soft per-voxel TP, FP and FN fields.
pub fn confusion_terms(gt: &Mask, pred: &Volume) -> Result<(Volume, Volume, Volume)> {
    check_batch(std::slice::from_ref(gt), std::slice::from_ref(pred))?;
    let shape = *gt.shape();
    let p = |i: usize| if gt.data()[i] { 1.0 } else { 0.0 };
    let q = pred.data();
    let tp = (0..shape.len()).map(|i| p(i) * q[i]).collect();
    let fp = (0..shape.len()).map(|i| (1.0 - p(i)) * q[i]).collect();
    let fn_ = (0..shape.len()).map(|i| p(i) * (1.0 - q[i])).collect();
    Ok((Volume::new(shape, tp)?, Volume::new(shape, fp)?, Volume::new(shape, fn_)?))
}

/// `1 - (s + sum TP) / (s + sum TP + alpha * sum FP + beta * sum FN)`.
pub fn tversky_loss(gt: &Mask, pred: &Volume, params: &TverskyParams, want_grad: bool) -> Result<LossReport> {
    tversky_loss_batch(std::slice::from_ref(gt), std::slice::from_ref(pred), params, want_grad).map(BatchLossReport::single)
}

pub fn tversky_loss_batch(
    gt: &[Mask],
    pred: &[Volume],
    params: &TverskyParams,
    want_grad: bool,
) -> Result<BatchLossReport> {
    params.validate()?;
    check_batch(gt, pred)?;
    let sizes: Vec<usize> = pred.iter().map(|q| q.data().len()).collect();
    let fg = |c: usize, i: usize| gt[c].data()[i];
    let q = |c: usize, i: usize| pred[c].data()[i];

    let tp = batch_sum(&sizes, |c, i| if fg(c, i) { q(c, i) } else { 0.0 });
    let fp = batch_sum(&sizes, |c, i| if fg(c, i) { 0.0 } else { q(c, i) });
    let fn_ = batch_sum(&sizes, |c, i| if fg(c, i) { 1.0 - q(c, i) } else { 0.0 });

    let TverskyParams { alpha, beta, smooth } = *params;
    let num = smooth + tp;
    let den = smooth + tp + alpha * fp + beta * fn_;
    let value = 1.0 - num / den;

    let gradients = want_grad.then(|| {
        let den2 = den * den;
        gradients(pred, |c, i| {
            let (dnum, dden) = if fg(c, i) { (1.0, 1.0 - beta) } else { (0.0, alpha) };
            -(dnum * den - num * dden) / den2
        })
    });
    Ok(BatchLossReport { value, gradients })
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn cross_entropy_loss(gt: &Mask, pred: &Volume, want_grad: bool) -> Result<LossReport> {
    cross_entropy_loss_batch(std::slice::from_ref(gt), std::slice::from_ref(pred), DEFAULT_CE_CLAMP, want_grad)
        .map(BatchLossReport::single)
}

/// Cross-entropy with a custom clamp. The gradient is zero wherever the
/// clamp is active.
pub fn cross_entropy_loss_batch(gt: &[Mask], pred: &[Volume], clamp: f64, want_grad: bool) -> Result<BatchLossReport> {
    validate_clamp(clamp)?;
    check_batch(gt, pred)?;
    let sizes: Vec<usize> = pred.iter().map(|q| q.data().len()).collect();
    let n = sizes.iter().sum::<usize>() as f64;
    let (lo, hi) = (clamp, 1.0 - clamp);
    // probability assigned to the true class
    let hit = |c: usize, i: usize| {
        let q = pred[c].data()[i];
        if gt[c].data()[i] {
            q
        } else {
            1.0 - q
        }
    };

    let value = batch_sum(&sizes, |c, i| -hit(c, i).clamp(lo, hi).ln()) / n;

    let gradients = want_grad.then(|| {
        gradients(pred, |c, i| {
            let h = hit(c, i);
            if h < lo || h > hi {
                return 0.0;
            }
            let sign = if gt[c].data()[i] { -1.0 } else { 1.0 };
            sign / (h * n)
        })
    });
    Ok(BatchLossReport { value, gradients })
}

/// Weighted lesion Tversky loss with the numerator-only TP weighting.
pub fn wlt_loss(
    gt: &Mask,
    pred: &Volume,
    omega: &WeightMap,
    params: &TverskyParams,
    want_grad: bool,
) -> Result<LossReport> {
    wlt_loss_batch(
        std::slice::from_ref(gt),
        std::slice::from_ref(pred),
        std::slice::from_ref(omega),
        params,
        TpWeighting::Numerator,
        want_grad,
    )
    .map(BatchLossReport::single)
}

pub fn wlt_loss_batch(
    gt: &[Mask],
    pred: &[Volume],
    omega: &[WeightMap],
    params: &TverskyParams,
    tp_weighting: TpWeighting,
    want_grad: bool,
) -> Result<BatchLossReport> {
    params.validate()?;
    check_batch(gt, pred)?;
    check_weights(gt, omega)?;
    let sizes: Vec<usize> = pred.iter().map(|q| q.data().len()).collect();
    let fg = |c: usize, i: usize| gt[c].data()[i];
    let q = |c: usize, i: usize| pred[c].data()[i];
    let w = |c: usize, i: usize| omega[c].weights()[i];

    let tp_w = batch_sum(&sizes, |c, i| if fg(c, i) { q(c, i) * w(c, i) } else { 0.0 });
    let tp_den = match tp_weighting {
        TpWeighting::Numerator => batch_sum(&sizes, |c, i| if fg(c, i) { q(c, i) } else { 0.0 }),
        TpWeighting::Both => tp_w,
    };
    let fp = batch_sum(&sizes, |c, i| if fg(c, i) { 0.0 } else { q(c, i) });
    let fn_w = batch_sum(&sizes, |c, i| if fg(c, i) { (1.0 - q(c, i)) * w(c, i) } else { 0.0 });

    let TverskyParams { alpha, beta, smooth } = *params;
    let num = smooth + tp_w;
    let den = smooth + tp_den + alpha * fp + beta * fn_w;
    let value = -num / den;

    let gradients = want_grad.then(|| {
        let den2 = den * den;
        gradients(pred, |c, i| {
            let (dnum, dden) = if fg(c, i) {
                let wi = w(c, i);
                let dtp = match tp_weighting {
                    TpWeighting::Numerator => 1.0,
                    TpWeighting::Both => wi,
                };
                (wi, dtp - beta * wi)
            } else {
                (0.0, alpha)
            };
            -(dnum * den - num * dden) / den2
        })
    });
    Ok(BatchLossReport { value, gradients })
}

/// Labels lesions in every case and builds their weight maps.
pub fn weight_maps(gt: &[Mask], params: &CombinedParams) -> Result<Vec<WeightMap>> {
    gt.iter()
        .map(|m| build_weight_map_with_units(&label_components(m, params.connectivity), &params.curve, params.units))
        .collect()
}

/// `lambda * CE + (1 - lambda) * WLT`, with lesion weights built from `gt`.
pub fn combined_loss(gt: &Mask, pred: &Volume, params: &CombinedParams, want_grad: bool) -> Result<LossReport> {
    combined_loss_batch(std::slice::from_ref(gt), std::slice::from_ref(pred), params, want_grad).map(BatchLossReport::single)
}

pub fn combined_loss_batch(
    gt: &[Mask],
    pred: &[Volume],
    params: &CombinedParams,
    want_grad: bool,
) -> Result<BatchLossReport> {
    params.validate()?;
    let omega = weight_maps(gt, params)?;
    combined_loss_batch_weighted(gt, pred, &omega, params, want_grad)
}

/// As [`combined_loss_batch`] with precomputed weight maps.
pub fn combined_loss_batch_weighted(
    gt: &[Mask],
    pred: &[Volume],
    omega: &[WeightMap],
    params: &CombinedParams,
    want_grad: bool,
) -> Result<BatchLossReport> {
    params.validate()?;
    let ce = cross_entropy_loss_batch(gt, pred, params.ce_clamp, want_grad)?;
    let wlt = wlt_loss_batch(gt, pred, omega, &params.tversky, params.tp_weighting, want_grad)?;
    Ok(affine(params.lambda, ce, wlt))
}

/// `lambda * a + (1 - lambda) * b`, values and gradients alike.
fn affine(lambda: f64, a: BatchLossReport, b: BatchLossReport) -> BatchLossReport {
    let mix = |x: f64, y: f64| lambda * x + (1.0 - lambda) * y;
    let gradients = match (a.gradients, b.gradients) {
        (Some(ga), Some(gb)) => Some(
            ga.iter()
                .zip(&gb)
                .map(|(va, vb)| {
                    let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| mix(x, y)).collect();
                    Volume::new(*va.shape(), data).expect("finite gradient")
                })
                .collect(),
        ),
        _ => None,
    };
    BatchLossReport { value: mix(a.value, b.value), gradients }
}

/// Selector for the available losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Tversky,
    CrossEntropy,
    Wlt,
    /// `lambda * CE + (1 - lambda) * Tversky`.
    TverskyCe,
    /// `lambda * CE + (1 - lambda) * WLT`.
    Combined,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tversky" => Ok(LossKind::Tversky),
            "ce" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            "wlt" => Ok(LossKind::Wlt),
            "tversky+ce" | "tversky-ce" => Ok(LossKind::TverskyCe),
            "combined" | "wlt-combined" => Ok(LossKind::Combined),
            _ => Err(Error::InvalidParam(format!(
                "unknown loss {s:?} (expected tversky, ce, wlt, tversky+ce or combined)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            LossKind::Tversky => "tversky",
            LossKind::CrossEntropy => "ce",
            LossKind::Wlt => "wlt",
            LossKind::TverskyCe => "tversky+ce",
            LossKind::Combined => "combined",
        })
    }
}

/// A loss together with all of its parameters.
///
/// The Tversky-type losses read `params.tversky`; the WLT-based ones also
/// read the weight-curve settings. Cross-entropy reads `params.ce_clamp`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: LossKind,
    pub params: CombinedParams,
}

impl Objective {
    /// The loss with its default parameters; plain Tversky and its CE mix use
    /// smoothing 1, the WLT losses use the small smoothing constant.
    pub fn with_defaults(kind: LossKind) -> Self {
        let mut params = CombinedParams::default();
        if matches!(kind, LossKind::Tversky | LossKind::TverskyCe) {
            params.tversky = TverskyParams::default();
        }
        Self { kind, params }
    }

    pub fn needs_weights(&self) -> bool {
        matches!(self.kind, LossKind::Wlt | LossKind::Combined)
    }

    /// Evaluates the loss; `omega` is built from `gt` when needed and absent.
    pub fn evaluate(
        &self,
        gt: &[Mask],
        pred: &[Volume],
        omega: Option<&[WeightMap]>,
        want_grad: bool,
    ) -> Result<BatchLossReport> {
        self.params.validate()?;
        let p = &self.params;
        let built;
        let omega = match (self.needs_weights(), omega) {
            (true, None) => {
                built = weight_maps(gt, p)?;
                Some(built.as_slice())
            }
            (_, o) => o,
        };
        match self.kind {
            LossKind::Tversky => tversky_loss_batch(gt, pred, &p.tversky, want_grad),
            LossKind::CrossEntropy => cross_entropy_loss_batch(gt, pred, p.ce_clamp, want_grad),
            LossKind::Wlt => wlt_loss_batch(gt, pred, omega.unwrap(), &p.tversky, p.tp_weighting, want_grad),
            LossKind::TverskyCe => {
                let ce = cross_entropy_loss_batch(gt, pred, p.ce_clamp, want_grad)?;
                let tv = tversky_loss_batch(gt, pred, &p.tversky, want_grad)?;
                Ok(affine(p.lambda, ce, tv))
            }
            LossKind::Combined => combined_loss_batch_weighted(gt, pred, omega.unwrap(), p, want_grad),
        }
    }
}

/// Default number of voxels probed by [`grad_check`].
pub const GRAD_CHECK_SAMPLES: usize = 512;
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Largest `|analytic - central difference| / max(1, |analytic|)` over a
/// voxel sample: every voxel when there are at most
/// [`GRAD_CHECK_SAMPLES`], an even stride otherwise.
pub fn grad_check(objective: &Objective, gt: &Mask, pred: &Volume, step: f64) -> Result<f64> {
    grad_check_sampled(objective, gt, pred, step, GRAD_CHECK_SAMPLES)
}

pub fn grad_check_sampled(objective: &Objective, gt: &Mask, pred: &Volume, step: f64, samples: usize) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParam(format!("degenerate step {step}")));
    }
    let gts = std::slice::from_ref(gt);
    let omega = if objective.needs_weights() { Some(weight_maps(gts, &objective.params)?) } else { None };
    let report = objective.evaluate(gts, std::slice::from_ref(pred), omega.as_deref(), true)?;
    let analytic = &report.gradients.expect("gradient requested")[0];

    let n = pred.data().len();
    let samples = samples.max(1);
    let stride = n.div_ceil(samples).max(1);
    let mut worst = 0.0f64;
    let mut probe = pred.data().to_vec();
    for i in (0..n).step_by(stride) {
        let q = pred.data()[i];
        if q - step < 0.0 || q + step > 1.0 {
            return Err(Error::InvalidParam(format!(
                "degenerate step {step}: voxel {i} at {q} leaves [0, 1] when perturbed"
            )));
        }
        let mut eval_at = |x: f64| -> Result<f64> {
            probe[i] = x;
            let v = Volume::new(*pred.shape(), probe.clone())?;
            let r = objective.evaluate(gts, std::slice::from_ref(&v), omega.as_deref(), false)?;
            Ok(r.value)
        };
        let plus = eval_at(q + step)?;
        let minus = eval_at(q - step)?;
        probe[i] = q;
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
