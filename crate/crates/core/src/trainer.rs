//! Desk-scale training harness.
//!
//! A [`VoxelScorer`] maps five fixed per-voxel features through a logistic
//! link to a foreground probability. It is trained by full-batch gradient
//! descent on a phantom corpus, chaining the loss module's gradient with
//! respect to the probabilities through the logistic and linear layers, so
//! the only thing that differs between runs is the loss being minimized.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::loss::{weight_maps, Objective};
use crate::reduce;
use crate::synth::{generate, Phantom, PhantomSpec};
use crate::volume::{load_volume, save_volume, threshold, GridShape, Mask, Volume};
use crate::weighting::WeightMap;

pub const FEATURE_NAMES: [&str; 5] = ["intensity", "mean3", "mean5", "var3", "bias"];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

pub type Features = Vec<[f64; N_FEATURES]>;

/// Box mean and variance over the in-grid part of a cubic neighborhood.
fn box_stats(v: &Volume, half: usize) -> (Vec<f64>, Vec<f64>) {
    let shape = v.shape();
    let d = shape.dims();
    let x = v.data();
    let mut mean = vec![0.0; x.len()];
    let mut var = vec![0.0; x.len()];
    for i in 0..x.len() {
        let c = shape.coords(i);
        let lo: [usize; 3] = std::array::from_fn(|a| c[a].saturating_sub(half));
        let hi: [usize; 3] = std::array::from_fn(|a| (c[a] + half).min(d[a] - 1));
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for xx in lo[0]..=hi[0] {
                    let val = x[shape.index(xx, y, z)];
                    s += val;
                    s2 += val * val;
                    n += 1.0;
                }
            }
        }
        mean[i] = s / n;
        var[i] = (s2 / n - mean[i] * mean[i]).max(0.0);
    }
    (mean, var)
}

/// Intensity, 3³ mean, 5³ mean, 3³ variance and a constant 1 for every voxel.
pub fn extract_features(image: &Volume) -> Features {
    let (mean3, var3) = box_stats(image, 1);
    let (mean5, _) = box_stats(image, 2);
    image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| [x, mean3[i], mean5[i], var3[i], 1.0])
        .collect()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Anything that turns a phantom into a foreground probability volume.
pub trait Segmenter {
    fn score(&self, phantom: &Phantom) -> Result<Volume>;
}

/// Logistic regression over [`FEATURE_NAMES`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelScorer {
    pub params: Vec<f64>,
}

impl VoxelScorer {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if params.len() != N_FEATURES || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParam(format!("scorer needs {N_FEATURES} finite parameters, got {params:?}")));
        }
        Ok(Self { params })
    }

    /// Fails only if a logit overflows to NaN.
    pub fn predict_features(&self, shape: GridShape, features: &Features) -> Result<Volume> {
        let data = features.iter().map(|f| sigmoid(dot(&self.params, f))).collect();
        Volume::new(shape, data)
    }

    pub fn predict(&self, image: &Volume) -> Result<Volume> {
        self.predict_features(*image.shape(), &extract_features(image))
    }

    /// Saves the parameters as an `N×1×1` f32 volume.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let shape = GridShape::with_dims([self.params.len(), 1, 1])?;
        save_volume(&Volume::new(shape, self.params.clone())?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let v = load_volume(path)?;
        Self::new(v.into_data()).map_err(|e| Error::format(path, e.to_string()))
    }
}

impl Segmenter for VoxelScorer {
    fn score(&self, phantom: &Phantom) -> Result<Volume> {
        self.predict(&phantom.image)
    }
}

/// Scores every voxel with its ground truth.
pub struct TruthScorer;

impl Segmenter for TruthScorer {
    fn score(&self, phantom: &Phantom) -> Result<Volume> {
        Ok(Volume::from_mask(&phantom.truth))
    }
}

/// Scores every voxel with the same value.
pub struct ConstantScorer(pub f64);

impl Segmenter for ConstantScorer {
    fn score(&self, phantom: &Phantom) -> Result<Volume> {
        Ok(Volume::filled(*phantom.truth.shape(), self.0))
    }
}

/// Mixed-size corpus template: one lesion of radius 4 to 4.6 voxels per 24³
/// phantom, which half of the time breaks into 16 to 24 isolated clusters,
/// giving many sub-20-voxel lesions alongside intact ones above 200 voxels.
pub fn lesion_mixture_template(seed: u64) -> PhantomSpec {
    PhantomSpec {
        shape: GridShape::with_dims([24; 3]).expect("valid dims"),
        n_lesions: 1,
        radius_range_vox: (4.0, 4.6),
        fragmentation_prob: 0.5,
        fragments_per_lesion: (16, 24),
        noise_sigma: 0.5,
        contrast: 1.0,
        seed,
    }
}

/// `count` phantoms from `template`, the i-th seeded with `template.seed + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub template: PhantomSpec,
    pub count: usize,
}

impl CorpusSpec {
    pub fn generate(&self) -> Result<Vec<Phantom>> {
        (0..self.count)
            .map(|i| generate(&PhantomSpec { seed: self.template.seed.wrapping_add(i as u64), ..self.template }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds the initial parameters.
    pub seed: u64,
    pub train: CorpusSpec,
    pub val: Option<CorpusSpec>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParam(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.train.count == 0 {
            return Err(Error::InvalidParam("training corpus is empty".into()));
        }
        self.objective.params.validate()
    }
}

/// Small deterministic starting point: `N(0, 0.01²)` per parameter.
pub fn initial_params(seed: u64) -> Vec<f64> {
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (0..N_FEATURES)
        .map(|_| {
            let (u1, u2) = (1.0 - unit(), unit());
            0.01 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Features, truths and (when the loss needs them) weight maps of a corpus.
pub struct TrainingSet {
    shapes: Vec<GridShape>,
    features: Vec<Features>,
    truths: Vec<Mask>,
    omega: Option<Vec<WeightMap>>,
}

impl TrainingSet {
    pub fn new(phantoms: &[Phantom], objective: &Objective) -> Result<Self> {
        let truths: Vec<Mask> = phantoms.iter().map(|p| p.truth.clone()).collect();
        let omega = if objective.needs_weights() { Some(weight_maps(&truths, &objective.params)?) } else { None };
        Ok(Self {
            shapes: phantoms.iter().map(|p| *p.truth.shape()).collect(),
            features: phantoms.iter().map(|p| extract_features(&p.image)).collect(),
            truths,
            omega,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    /// Loss of `params` over the whole set and its gradient w.r.t. `params`.
    pub fn loss_and_grad(&self, objective: &Objective, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let scorer = VoxelScorer { params: params.to_vec() };
        let preds: Vec<Volume> = self
            .features
            .iter()
            .zip(&self.shapes)
            .map(|(f, &s)| scorer.predict_features(s, f))
            .collect::<Result<_>>()?;
        let report = objective.evaluate(&self.truths, &preds, self.omega.as_deref(), true)?;
        let grads = report.gradients.expect("gradient requested");

        let per_case: Vec<Vec<f64>> = (0..self.len())
            .map(|c| {
                let (f, q, g) = (&self.features[c], preds[c].data(), grads[c].data());
                reduce::sum_vec_by(f.len(), N_FEATURES, |i, acc| {
                    let s = g[i] * q[i] * (1.0 - q[i]);
                    for (a, x) in acc.iter_mut().zip(&f[i]) {
                        *a += s * x;
                    }
                })
            })
            .collect();
        let grad = (0..N_FEATURES).map(|j| reduce::sum_by(per_case.len(), |c| per_case[c][j])).collect();
        Ok((report.value, grad))
    }

    /// Plain gradient descent from `init`; returns the final parameters and
    /// the loss before each update.
    pub fn fit(&self, objective: &Objective, init: Vec<f64>, learning_rate: f64, epochs: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut params = init;
        let mut losses = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let (loss, grad) = match self.loss_and_grad(objective, &params) {
                Err(Error::InvalidValue(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                r => r?,
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            losses.push(loss);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
        }
        Ok((params, losses))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: VoxelScorer,
    /// Training loss before each epoch's update.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// `epoch,loss` rows with a header.
    pub fn write_log(&self, mut out: impl Write, fmt: impl Fn(f64) -> String) -> std::io::Result<()> {
        writeln!(out, "epoch,loss")?;
        for (e, l) in self.losses.iter().enumerate() {
            writeln!(out, "{e},{}", fmt(*l))?;
        }
        Ok(())
    }
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = initial_params(cfg.seed);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model: VoxelScorer { params: init }, losses: Vec::new() });
    }
    let phantoms = cfg.train.generate()?;
    let set = TrainingSet::new(&phantoms, &cfg.objective)?;
    let (params, losses) = set.fit(&cfg.objective, init, cfg.learning_rate, cfg.epochs)?;
    Ok(TrainOutcome { model: VoxelScorer { params }, losses })
}

/// Size buckets for lesion-wise recall, in voxels.
pub const SMALL_BELOW: usize = 20;
pub const LARGE_ABOVE: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub total: usize,
    pub detected: usize,
}

impl BucketRecall {
    /// `None` for an empty bucket.
    pub fn recall(&self) -> Option<f64> {
        (self.total > 0).then(|| self.detected as f64 / self.total as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionRecallReport {
    /// Fewer than 20 voxels.
    pub small: BucketRecall,
    /// 20 to 200 voxels.
    pub medium: BucketRecall,
    /// More than 200 voxels.
    pub large: BucketRecall,
}

impl LesionRecallReport {
    fn bucket_mut(&mut self, size: usize) -> &mut BucketRecall {
        if size < SMALL_BELOW {
            &mut self.small
        } else if size > LARGE_ABOVE {
            &mut self.large
        } else {
            &mut self.medium
        }
    }

    pub fn buckets(&self) -> [(&'static str, BucketRecall); 3] {
        [("small", self.small), ("medium", self.medium), ("large", self.large)]
    }
}

/// A ground-truth lesion counts as detected when a single predicted
/// component covers at least half of its voxels.
pub fn evaluate_lesionwise(model: &impl Segmenter, phantoms: &[Phantom], threshold_at: f64) -> Result<LesionRecallReport> {
    let mut report = LesionRecallReport::default();
    for ph in phantoms {
        let pred = threshold(&model.score(ph)?, threshold_at)?;
        pred.shape().ensure_same(ph.truth.shape())?;
        let gt = label_components(&ph.truth, Connectivity::TwentySix);
        let found = label_components(&pred, Connectivity::TwentySix);

        // overlap[(lesion, component)] via a sorted pair list
        let mut pairs: Vec<(u32, u32)> = gt
            .labels()
            .iter()
            .zip(found.labels())
            .filter(|(&g, &f)| g != 0 && f != 0)
            .map(|(&g, &f)| (g, f))
            .collect();
        pairs.sort_unstable();
        let mut best = vec![0usize; gt.num_lesions()];
        let mut i = 0;
        while i < pairs.len() {
            let mut j = i;
            while j < pairs.len() && pairs[j] == pairs[i] {
                j += 1;
            }
            let l = pairs[i].0 as usize - 1;
            best[l] = best[l].max(j - i);
            i = j;
        }
        for (l, &size) in gt.volumes().iter().enumerate() {
            let b = report.bucket_mut(size);
            b.total += 1;
            if 2 * best[l] >= size {
                b.detected += 1;
            }
        }
    }
    Ok(report)
}
