//! Connected-component labeling of lesion masks.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridShape, Mask, Volume};

/// Voxel adjacency: face (6), face+edge (18) or face+edge+corner (26).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets, in raster order.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::Eighteen => manhattan == 1 || manhattan == 2,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" | "six" => Ok(Connectivity::Six),
            "18" | "eighteen" => Ok(Connectivity::Eighteen),
            "26" | "twenty-six" | "twentysix" => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidParam(format!("unknown connectivity {s:?} (expected 6, 18 or 26)"))),
        }
    }
}

/// Lesion IDs per voxel (0 = background) and voxel counts per lesion.
#[derive(Clone, Debug, PartialEq)]
pub struct LesionLabeling {
    shape: GridShape,
    labels: Vec<u32>,
    volumes: Vec<usize>,
}

impl LesionLabeling {
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// `volumes()[l - 1]` is the voxel count of lesion `l`.
    pub fn volumes(&self) -> &[usize] {
        &self.volumes
    }

    pub fn num_lesions(&self) -> usize {
        self.volumes.len()
    }

    /// Labels as a float volume, for export.
    pub fn to_volume(&self) -> Volume {
        Volume::new(self.shape, self.labels.iter().map(|&l| l as f64).collect()).expect("labels are finite")
    }

    /// Physical volume of lesion `id` in mm³.
    pub fn lesion_volume_mm3(&self, id: usize) -> Result<f64> {
        lesion_volume_mm3(self, &self.shape, id)
    }
}

/// Labels the foreground of `mask` into connected components.
///
/// Components are numbered 1..=L in the raster order (x fastest) of their
/// first voxel.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> LesionLabeling {
    let shape = *mask.shape();
    let fg = mask.data();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; shape.len()];
    let mut volumes = Vec::new();
    let mut queue = VecDeque::new();

    for seed in 0..shape.len() {
        if !fg[seed] || labels[seed] != 0 {
            continue;
        }
        let id = volumes.len() as u32 + 1;
        labels[seed] = id;
        queue.push_back(seed);
        let mut count = 0usize;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let [x, y, z] = shape.coords(i);
            for off in &offsets {
                let p = [x as i64 + off[0], y as i64 + off[1], z as i64 + off[2]];
                if !shape.contains(p) {
                    continue;
                }
                let j = shape.index(p[0] as usize, p[1] as usize, p[2] as usize);
                if fg[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        volumes.push(count);
    }

    LesionLabeling { shape, labels, volumes }
}

/// Voxel count of lesion `id` times the voxel volume of `shape`.
pub fn lesion_volume_mm3(labeling: &LesionLabeling, shape: &GridShape, id: usize) -> Result<f64> {
    if id == 0 || id > labeling.volumes.len() {
        return Err(Error::InvalidParam(format!(
            "lesion id {id} out of range 1..={}",
            labeling.volumes.len()
        )));
    }
    Ok(labeling.volumes[id - 1] as f64 * shape.voxel_volume())
}
