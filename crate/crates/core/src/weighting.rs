//! Size-adaptive lesion weights.
//!
//! A lesion of volume `v` receives the weight
//!
//! ```text
//! omega(v) = w_max - (w_max - w_min) / (1 + a_shift * exp(-k * v / vrange))
//! ```
//!
//! a decreasing logistic curve running from close to `w_max` for tiny lesions
//! down to `w_min` for lesions much larger than `vrange`. With
//! `a_shift = exp(k / 2)` the midpoint `(w_max + w_min) / 2` sits at
//! `v = vrange / 2`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::LesionLabeling;
use crate::error::{Error, Result};
use crate::volume::{GridShape, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCurveParams {
    pub w_max: f64,
    pub w_min: f64,
    /// Volume scale of the curve, in the same units as the lesion volume.
    pub vrange: f64,
    /// Steepness.
    pub k: f64,
    /// Horizontal shift of the logistic midpoint.
    pub a_shift: f64,
}

impl Default for WeightCurveParams {
    fn default() -> Self {
        Self { w_max: 10.0, w_min: 1.0, vrange: 350.0, k: 7.0, a_shift: 3.5f64.exp() }
    }
}

impl WeightCurveParams {
    /// `w_max == w_min` is accepted and yields a constant curve.
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.w_max, self.w_min, self.vrange, self.k, self.a_shift].iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidParam(format!("weight curve parameters must be finite: {self:?}")));
        }
        if !(self.w_min > 0.0 && self.w_max >= self.w_min) {
            return Err(Error::InvalidParam(format!(
                "weight curve needs w_max >= w_min > 0, got w_max={} w_min={}",
                self.w_max, self.w_min
            )));
        }
        if !(self.vrange > 0.0 && self.k > 0.0 && self.a_shift > 0.0) {
            return Err(Error::InvalidParam(format!(
                "weight curve needs vrange, k, a_shift > 0, got vrange={} k={} a_shift={}",
                self.vrange, self.k, self.a_shift
            )));
        }
        Ok(())
    }

    /// Evaluates the curve without validating; `v` must be non-negative.
    #[inline]
    pub fn weight(&self, v: f64) -> f64 {
        let span = self.w_max - self.w_min;
        self.w_max - span / (1.0 + self.a_shift * (-self.k * v / self.vrange).exp())
    }
}

/// Weight of a lesion with volume `v`.
pub fn omega(v: f64, params: &WeightCurveParams) -> Result<f64> {
    params.validate()?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::InvalidParam(format!("lesion volume must be finite and >= 0, got {v}")));
    }
    Ok(params.weight(v))
}

/// Which volume of a lesion feeds the weight curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeUnits {
    #[default]
    Voxels,
    Mm3,
}

impl FromStr for VolumeUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxels" | "vox" => Ok(VolumeUnits::Voxels),
            "mm3" => Ok(VolumeUnits::Mm3),
            _ => Err(Error::InvalidParam(format!("unknown volume units {s:?} (expected voxels or mm3)"))),
        }
    }
}

/// Per-voxel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    shape: GridShape,
    weights: Vec<f64>,
}

impl WeightMap {
    /// Arbitrary positive weights; mostly useful for tests and experiments.
    pub fn new(shape: GridShape, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != shape.len() {
            return Err(Error::InvalidValue(format!(
                "weight map has {} values, shape needs {}",
                weights.len(),
                shape.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidValue(format!("weights must be finite and > 0, found {w}")));
        }
        Ok(Self { shape, weights })
    }

    pub fn uniform(shape: GridShape, w: f64) -> Result<Self> {
        Self::new(shape, vec![w; shape.len()])
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(self.shape, self.weights.clone()).expect("weights are finite")
    }
}

/// Assigns every lesion voxel the weight of its lesion's voxel count;
/// background voxels get `w_min`.
pub fn build_weight_map(labeling: &LesionLabeling, params: &WeightCurveParams) -> Result<WeightMap> {
    build_weight_map_with_units(labeling, params, VolumeUnits::Voxels)
}

pub fn build_weight_map_with_units(
    labeling: &LesionLabeling,
    params: &WeightCurveParams,
    units: VolumeUnits,
) -> Result<WeightMap> {
    params.validate()?;
    let scale = match units {
        VolumeUnits::Voxels => 1.0,
        VolumeUnits::Mm3 => labeling.shape().voxel_volume(),
    };
    let per_lesion: Vec<f64> = labeling.volumes().iter().map(|&n| params.weight(n as f64 * scale)).collect();
    let weights = labeling
        .labels()
        .iter()
        .map(|&l| if l == 0 { params.w_min } else { per_lesion[l as usize - 1] })
        .collect();
    Ok(WeightMap { shape: *labeling.shape(), weights })
}
