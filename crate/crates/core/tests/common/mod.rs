//! Reference implementations used as test oracles. Each is written from the
//! definition, without sharing code paths with the library.
#![allow(dead_code)]

pub mod cli;

use num_rational::Ratio;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salw::{CaseOutcome, GridShape, Mask, Volume};

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn shape(&mut self, max: usize) -> GridShape {
        GridShape::with_dims([1 + self.below(max), 1 + self.below(max), 1 + self.below(max)]).unwrap()
    }

    pub fn mask(&mut self, shape: GridShape, density: f64) -> Mask {
        Mask::from_fn(shape, |_| self.unit() < density)
    }

    pub fn probs(&mut self, shape: GridShape, lo: f64, hi: f64) -> Volume {
        Volume::from_fn(shape, |_| self.range(lo, hi)).unwrap()
    }
}

/// ω(v) with the published defaults, straight from the formula.
pub fn omega_reference(v: f64) -> f64 {
    let (w_max, w_min, vrange, k) = (10.0f64, 1.0f64, 350.0f64, 7.0f64);
    let a = std::f64::consts::E.powf(7.0).sqrt();
    w_max - (w_max - w_min) / (1.0 + a * (-k * v / vrange).exp())
}

fn coords(shape: &GridShape, i: usize) -> [i64; 3] {
    let d = shape.dims();
    [(i % d[0]) as i64, ((i / d[0]) % d[1]) as i64, (i / (d[0] * d[1])) as i64]
}

/// Adjacency straight from the offset definition: Chebyshev distance 1 and
/// at most `max_manhattan` differing steps.
pub fn adjacent(a: [i64; 3], b: [i64; 3], max_manhattan: i64) -> bool {
    let d: Vec<i64> = (0..3).map(|k| (a[k] - b[k]).abs()).collect();
    let cheb = *d.iter().max().unwrap();
    let man: i64 = d.iter().sum();
    cheb == 1 && man <= max_manhattan
}

/// Component id per foreground voxel by repeated flood fill over all
/// foreground pairs; background maps to `usize::MAX`.
pub fn flood_fill_oracle(mask: &Mask, max_manhattan: i64) -> Vec<usize> {
    let shape = *mask.shape();
    let fg: Vec<usize> = (0..shape.len()).filter(|&i| mask.data()[i]).collect();
    let pts: Vec<[i64; 3]> = fg.iter().map(|&i| coords(&shape, i)).collect();
    let mut comp = vec![usize::MAX; fg.len()];
    let mut next = 0;
    for s in 0..fg.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..fg.len() {
                if comp[b] == usize::MAX && adjacent(pts[a], pts[b], max_manhattan) {
                    comp[b] = next;
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    let mut out = vec![usize::MAX; shape.len()];
    for (k, &i) in fg.iter().enumerate() {
        out[i] = comp[k];
    }
    out
}

/// True when the two labelings induce the same partition (0 / MAX = background).
pub fn same_partition(labels: &[u32], oracle: &[usize]) -> bool {
    use std::collections::HashMap;
    let mut fwd: HashMap<u32, usize> = HashMap::new();
    let mut back: HashMap<usize, u32> = HashMap::new();
    for (&l, &o) in labels.iter().zip(oracle) {
        if (l == 0) != (o == usize::MAX) {
            return false;
        }
        if l == 0 {
            continue;
        }
        if *fwd.entry(l).or_insert(o) != o || *back.entry(o).or_insert(l) != l {
            return false;
        }
    }
    true
}

pub fn dice_oracle(a: &Mask, b: &Mask) -> f64 {
    let sa: Vec<usize> = (0..a.data().len()).filter(|&i| a.data()[i]).collect();
    let sb: Vec<usize> = (0..b.data().len()).filter(|&i| b.data()[i]).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.iter().filter(|i| sb.contains(i)).count();
    let r = Ratio::new(2 * inter as i64, (sa.len() + sb.len()) as i64);
    *r.numer() as f64 / *r.denom() as f64
}

/// All-pairs Hausdorff distance between voxel centers.
pub fn hausdorff_oracle(a: &Mask, b: &Mask) -> f64 {
    let shape = *a.shape();
    let s = shape.spacing();
    let pts = |m: &Mask| -> Vec<[f64; 3]> {
        (0..shape.len())
            .filter(|&i| m.data()[i])
            .map(|i| {
                let c = coords(&shape, i);
                [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]]
            })
            .collect()
    };
    let (pa, pb) = (pts(a), pts(b));
    let dist = |p: &[f64; 3], q: &[f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter().map(|p| y.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

/// Pair-counting AUC as an exact rational.
pub fn auc_oracle(cases: &[CaseOutcome]) -> f64 {
    let pos: Vec<f64> = cases.iter().filter(|c| c.label).map(|c| c.score).collect();
    let neg: Vec<f64> = cases.iter().filter(|c| !c.label).map(|c| c.score).collect();
    let mut halves = 0i64;
    for p in &pos {
        for n in &neg {
            halves += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    let r = Ratio::new(halves, 2 * (pos.len() * neg.len()) as i64);
    *r.numer() as f64 / *r.denom() as f64
}

/// Cohen's kappa from p_o and p_e as exact rationals.
pub fn kappa_oracle(cases: &[CaseOutcome], threshold: f64) -> f64 {
    let n = cases.len() as i64;
    let agree = cases.iter().filter(|c| (c.score >= threshold) == c.label).count() as i64;
    let pred_pos = cases.iter().filter(|c| c.score >= threshold).count() as i64;
    let true_pos = cases.iter().filter(|c| c.label).count() as i64;
    let p_o = Ratio::new(agree, n);
    let p_e = Ratio::new(pred_pos * true_pos + (n - pred_pos) * (n - true_pos), n * n);
    if p_e == Ratio::from_integer(1) {
        return 0.0;
    }
    let k = (p_o - p_e) / (Ratio::from_integer(1) - p_e);
    *k.numer() as f64 / *k.denom() as f64
}

/// Random cohort with scores on a coarse grid so ties occur.
pub fn random_cases(rng: &mut Rng, n: usize) -> Vec<CaseOutcome> {
    (0..n)
        .map(|i| {
            let score = rng.below(11) as f64 / 10.0;
            CaseOutcome::new(format!("c{i}"), score, rng.unit() < 0.4).unwrap()
        })
        .collect()
}
