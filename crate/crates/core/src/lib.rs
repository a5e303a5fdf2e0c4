//! Size-adaptive lesion weighting for volumetric segmentation losses.
//!
//! Lesions in a ground-truth mask are labeled as 3D connected components and
//! each voxel is weighted by a logistic function of the volume of the lesion it
//! belongs to, so that small lesions are not drowned out by large ones. The
//! weights feed the weighted lesion Tversky loss, which is provided together
//! with plain Tversky, binary cross-entropy and their combination, all with
//! hand-derived gradients.
//!
//! Around the losses sit the pieces needed to exercise them end to end:
//!
//! - [`volume`]: dense grids, masks and the detached-header file format.
//! - [`components`]: connected-component labeling and lesion volumes.
//! - [`weighting`]: the lesion weight curve and per-voxel weight maps.
//! - [`loss`]: loss values, analytic gradients and a finite-difference checker.
//! - [`metrics`]: Dice, Hausdorff, AUC and Cohen's kappa.
//! - [`synth`]: reproducible lesion phantoms with shrinkage and fragmentation.
//! - [`trainer`]: a small logistic voxel scorer trained against any of the losses.
//!
//! Every reduction goes through [`reduce`], a fixed-shape pairwise summation
//! tree, so results do not depend on the number of worker threads.

pub mod components;
pub mod config;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod reduce;
pub mod synth;
pub mod trainer;
pub mod volume;
pub mod weighting;

pub use components::{label_components, Connectivity, LesionLabeling};
pub use error::{Error, Result};
pub use loss::{
    combined_loss, confusion_terms, cross_entropy_loss, grad_check, tversky_loss, wlt_loss,
    CombinedParams, LossKind, LossReport, TpWeighting, TverskyParams,
};
pub use metrics::{apply_empty_fallback, auc, dice, hausdorff, kappa, CaseOutcome, MetricReport};
pub use synth::{generate, shrink, Phantom, PhantomSpec};
pub use trainer::{evaluate_lesionwise, train, LesionRecallReport, TrainConfig, VoxelScorer};
pub use volume::{load_mask, load_volume, save_mask, save_volume, threshold, GridShape, Mask, Volume};
pub use weighting::{build_weight_map, omega, VolumeUnits, WeightCurveParams, WeightMap};
