//! Reproducible lesion phantoms.
//!
//! A phantom is a noisy intensity volume with bright lesions on a zero
//! background, plus the ground-truth mask of those lesions. Lesions are
//! ellipsoids with independently drawn radii, placed so that no two lesions
//! touch, even diagonally. With probability `fragmentation_prob` a lesion is
//! instead broken into several small isolated clusters whose voxel counts
//! add up to the volume of the ellipsoid it replaces. [`shrink`] scales every
//! lesion about its own center, mimicking concentric response to treatment.
//!
//! Randomness comes from ChaCha8 seeded with `seed` via
//! `SeedableRng::seed_from_u64`. Stream 0 drives the background noise and
//! stream `l + 1` drives everything about lesion `l` (radii, fragmentation,
//! placement retries), so adding a lesion never perturbs earlier ones.
//! Uniform reals are `(next_u64 >> 11) * 2^-53`; normals use Box–Muller.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{save_mask, save_volume, GridShape, Mask, Volume};

/// Placement attempts per lesion or fragment before giving up.
pub const MAX_PLACEMENT_TRIES: usize = 200;

const NOISE_STREAM: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: GridShape,
    pub n_lesions: usize,
    /// Per-axis radii are drawn uniformly from this range, in voxels.
    pub radius_range_vox: (f64, f64),
    pub fragmentation_prob: f64,
    pub fragments_per_lesion: (usize, usize),
    pub noise_sigma: f64,
    pub contrast: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// A single-lesion 24³ phantom; adjust fields as needed.
    pub fn new(shape: GridShape, seed: u64) -> Self {
        Self {
            shape,
            n_lesions: 1,
            radius_range_vox: (2.0, 4.0),
            fragmentation_prob: 0.0,
            fragments_per_lesion: (2, 4),
            noise_sigma: 0.5,
            contrast: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rmin, rmax) = self.radius_range_vox;
        if !(rmin.is_finite() && rmax.is_finite() && rmin >= 0.5 && rmin <= rmax) {
            return Err(Error::InvalidParam(format!("radius range must satisfy 0.5 <= min <= max, got {:?}", self.radius_range_vox)));
        }
        if !(0.0..=1.0).contains(&self.fragmentation_prob) {
            return Err(Error::InvalidParam(format!("fragmentation_prob must lie in [0, 1], got {}", self.fragmentation_prob)));
        }
        let (fmin, fmax) = self.fragments_per_lesion;
        if !(fmin >= 1 && fmin <= fmax) {
            return Err(Error::InvalidParam(format!("fragment range must satisfy 1 <= min <= max, got {:?}", self.fragments_per_lesion)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParam(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return Err(Error::InvalidParam(format!("contrast must be > 0, got {}", self.contrast)));
        }
        let d = self.shape.dims();
        if let Some(a) = (0..3).find(|&a| 2.0 * rmax.ceil() + 1.0 > d[a] as f64) {
            return Err(Error::InvalidParam(format!("radius {rmax} does not fit along axis {a} of {d:?}")));
        }
        Ok(())
    }
}

/// One connected piece of a lesion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Blob {
    /// Voxels whose center satisfies `sum(((v - c) / r)^2) <= 1`.
    Ellipsoid { center: [usize; 3], radii: [f64; 3] },
    /// The `voxels` grid voxels nearest to `center`, ties by linear index.
    Cluster { center: [usize; 3], voxels: usize },
}

impl Blob {
    /// Geometry after scaling the radii by `s`. A blob vanishes once its
    /// smallest radius drops below half a voxel.
    fn scaled(&self, s: f64) -> Option<Blob> {
        match *self {
            Blob::Ellipsoid { center, radii } => {
                let radii = radii.map(|r| r * s);
                (radii.iter().cloned().fold(f64::INFINITY, f64::min) >= 0.5).then_some(Blob::Ellipsoid { center, radii })
            }
            Blob::Cluster { center, voxels } => {
                let voxels = (voxels as f64 * s * s * s).round() as usize;
                (voxels > 0).then_some(Blob::Cluster { center, voxels })
            }
        }
    }

    /// Linear indices of the blob's voxels, or `None` if it leaves the grid.
    fn rasterize(&self, shape: &GridShape) -> Option<Vec<usize>> {
        let d = shape.dims();
        match *self {
            Blob::Ellipsoid { center, radii } => {
                let mut out = Vec::new();
                let ext: [i64; 3] = radii.map(|r| r.floor() as i64);
                for a in 0..3 {
                    if center[a] as i64 - ext[a] < 0 || center[a] as i64 + ext[a] >= d[a] as i64 {
                        return None;
                    }
                }
                for z in -ext[2]..=ext[2] {
                    for y in -ext[1]..=ext[1] {
                        for x in -ext[0]..=ext[0] {
                            let q = (x as f64 / radii[0]).powi(2) + (y as f64 / radii[1]).powi(2) + (z as f64 / radii[2]).powi(2);
                            if q <= 1.0 {
                                out.push(shape.index(
                                    (center[0] as i64 + x) as usize,
                                    (center[1] as i64 + y) as usize,
                                    (center[2] as i64 + z) as usize,
                                ));
                            }
                        }
                    }
                }
                out.sort_unstable();
                Some(out)
            }
            Blob::Cluster { center, voxels } => {
                // a ball of this radius holds well over `voxels` lattice points
                let ext = ((3.0 * voxels as f64 / (4.0 * std::f64::consts::PI)).cbrt().ceil() as i64) + 1;
                for a in 0..3 {
                    if center[a] as i64 - ext < 0 || center[a] as i64 + ext >= d[a] as i64 {
                        return None;
                    }
                }
                let mut cand = Vec::new();
                for z in -ext..=ext {
                    for y in -ext..=ext {
                        for x in -ext..=ext {
                            let idx = shape.index(
                                (center[0] as i64 + x) as usize,
                                (center[1] as i64 + y) as usize,
                                (center[2] as i64 + z) as usize,
                            );
                            cand.push((x * x + y * y + z * z, idx));
                        }
                    }
                }
                cand.sort_unstable();
                let mut out: Vec<usize> = cand.into_iter().take(voxels).map(|(_, i)| i).collect();
                out.sort_unstable();
                Some(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub blobs: Vec<Blob>,
    pub fragmented: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Volume,
    pub truth: Mask,
    pub spec: PhantomSpec,
    /// Geometry at scale 1.
    pub lesions: Vec<Lesion>,
    /// Cumulative shrink factor applied to `lesions`.
    pub scale: f64,
}

impl Phantom {
    /// Voxel indices of each lesion at the current scale.
    pub fn lesion_voxels(&self) -> Vec<Vec<usize>> {
        lesion_voxels(&self.lesions, &self.spec.shape, self.scale)
    }
}

struct Stream(ChaCha8Rng);

impl Stream {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Stream(rng)
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    fn int(&mut self, lo: usize, hi: usize) -> usize {
        let span = (hi - lo + 1) as f64;
        lo + ((self.unit() * span) as usize).min(hi - lo)
    }
}

fn noise_field(spec: &PhantomSpec) -> Vec<f64> {
    let n = spec.shape.len();
    let mut out = Vec::with_capacity(n + 1);
    if spec.noise_sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = Stream::new(spec.seed, NOISE_STREAM);
    while out.len() < n {
        let u1 = 1.0 - rng.unit();
        let u2 = rng.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out.push(spec.noise_sigma * r * t.cos());
        out.push(spec.noise_sigma * r * t.sin());
    }
    out.truncate(n);
    out
}

fn lesion_voxels(lesions: &[Lesion], shape: &GridShape, scale: f64) -> Vec<Vec<usize>> {
    lesions
        .iter()
        .map(|l| {
            let mut v: Vec<usize> = l
                .blobs
                .iter()
                .filter_map(|b| b.scaled(scale))
                .flat_map(|b| b.rasterize(shape).expect("scaled blob stays inside the grid"))
                .collect();
            v.sort_unstable();
            v
        })
        .collect()
}

fn assemble(spec: PhantomSpec, lesions: Vec<Lesion>, scale: f64) -> Phantom {
    let shape = spec.shape;
    let mut truth = vec![false; shape.len()];
    for vox in lesion_voxels(&lesions, &shape, scale) {
        for i in vox {
            truth[i] = true;
        }
    }
    let noise = noise_field(&spec);
    let image: Vec<f64> = noise.iter().zip(&truth).map(|(&n, &t)| n + if t { spec.contrast } else { 0.0 }).collect();
    Phantom {
        image: Volume::new(shape, image).expect("finite image"),
        truth: Mask::new(shape, truth).expect("sized mask"),
        spec,
        lesions,
        scale,
    }
}

/// Marks `vox` and their 26-neighborhood as unavailable.
fn reserve(forbidden: &mut [bool], shape: &GridShape, vox: &[usize]) {
    for &i in vox {
        let c = shape.coords(i);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let p = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                    if shape.contains(p) {
                        forbidden[shape.index(p[0] as usize, p[1] as usize, p[2] as usize)] = true;
                    }
                }
            }
        }
    }
}

fn try_place(blob: &Blob, shape: &GridShape, forbidden: &[bool]) -> Option<Vec<usize>> {
    let vox = blob.rasterize(shape)?;
    (!vox.is_empty() && vox.iter().all(|&i| !forbidden[i])).then_some(vox)
}

/// Generates the phantom described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let shape = spec.shape;
    let dims = shape.dims();
    let mut forbidden = vec![false; shape.len()];
    let mut lesions = Vec::with_capacity(spec.n_lesions);

    for l in 0..spec.n_lesions {
        let mut rng = Stream::new(spec.seed, l as u64 + 1);
        let (rmin, rmax) = spec.radius_range_vox;
        let radii = [rng.uniform(rmin, rmax), rng.uniform(rmin, rmax), rng.uniform(rmin, rmax)];
        let fragmented = rng.unit() < spec.fragmentation_prob;
        let k = rng.int(spec.fragments_per_lesion.0, spec.fragments_per_lesion.1);

        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let mut center = [0usize; 3];
            for a in 0..3 {
                let ext = radii[a].floor() as usize;
                center[a] = rng.int(ext, dims[a] - 1 - ext);
            }
            let blob = Blob::Ellipsoid { center, radii };
            if fragmented {
                // fragments may land anywhere the parent's footprint could have
                if let Some(vox) = blob.rasterize(&shape) {
                    placed = Some((blob, vox));
                    break;
                }
            } else if let Some(vox) = try_place(&blob, &shape, &forbidden) {
                placed = Some((blob, vox));
                break;
            }
        }
        let (parent, parent_vox) =
            placed.ok_or_else(|| Error::Placement(format!("lesion {l} did not fit after {MAX_PLACEMENT_TRIES} tries")))?;

        if !fragmented {
            reserve(&mut forbidden, &shape, &parent_vox);
            lesions.push(Lesion { blobs: vec![parent], fragmented: false });
            continue;
        }

        let total = parent_vox.len();
        let k = k.min(total);
        let Blob::Ellipsoid { center: pc, .. } = parent else { unreachable!() };
        let reach: [usize; 3] = std::array::from_fn(|a| (2.0 * radii[a]).ceil() as usize + 3);
        let mut blobs = Vec::with_capacity(k);
        for f in 0..k {
            let voxels = total / k + usize::from(f < total % k);
            let mut fragment = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let center: [usize; 3] = std::array::from_fn(|a| {
                    let lo = pc[a].saturating_sub(reach[a]);
                    let hi = (pc[a] + reach[a]).min(dims[a] - 1);
                    rng.int(lo, hi)
                });
                let blob = Blob::Cluster { center, voxels };
                if let Some(vox) = try_place(&blob, &shape, &forbidden) {
                    fragment = Some((blob, vox));
                    break;
                }
            }
            let (blob, vox) = fragment.ok_or_else(|| {
                Error::Placement(format!("fragment {f} of lesion {l} did not fit after {MAX_PLACEMENT_TRIES} tries"))
            })?;
            reserve(&mut forbidden, &shape, &vox);
            blobs.push(blob);
        }
        lesions.push(Lesion { blobs, fragmented: true });
    }

    Ok(assemble(*spec, lesions, 1.0))
}

/// Scales every lesion about its own center by `factor` and regenerates the
/// image over the same noise.
pub fn shrink(phantom: &Phantom, factor: f64) -> Result<Phantom> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidParam(format!("shrink factor must lie in (0, 1], got {factor}")));
    }
    Ok(assemble(phantom.spec, phantom.lesions.clone(), phantom.scale * factor))
}

/// Sidecar recording how a saved phantom was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub spec: PhantomSpec,
    pub scale: f64,
}

impl PhantomRecord {
    /// Regenerates the phantom.
    pub fn build(&self) -> Result<Phantom> {
        let p = generate(&self.spec)?;
        if self.scale == 1.0 {
            Ok(p)
        } else {
            shrink(&p, self.scale)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Paths written by [`save_phantom`] for a given stem.
pub fn phantom_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}_image.vhdr")),
        dir.join(format!("{stem}_truth.vhdr")),
        dir.join(format!("{stem}_spec.json")),
    )
}

/// Writes `<stem>_image`, `<stem>_truth` and the `<stem>_spec.json` sidecar.
pub fn save_phantom(phantom: &Phantom, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    let (image, truth, sidecar) = phantom_paths(dir, stem);
    save_volume(&phantom.image, image)?;
    save_mask(&phantom.truth, truth)?;
    let record = PhantomRecord { spec: phantom.spec, scale: phantom.scale };
    let text = serde_json::to_string_pretty(&record).expect("record serializes");
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
}
