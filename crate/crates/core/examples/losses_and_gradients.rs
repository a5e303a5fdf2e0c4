//! Every loss on one case, with analytic gradients checked by central differences.

use salw::loss::{grad_check, Objective};
use salw::{GridShape, LossKind, Mask, Volume};

fn main() -> salw::Result<()> {
    let shape = GridShape::with_dims([12, 12, 6])?;
    let gt = Mask::from_fn(shape, |[x, y, z]| (2..8).contains(&x) && (2..8).contains(&y) && (1..4).contains(&z) || [x, y, z] == [10, 10, 4]);
    // a prediction that finds the big lesion and misses the single voxel
    let pred = Volume::from_fn(shape, |[x, y, z]| {
        let inside = (2..8).contains(&x) && (2..8).contains(&y) && (1..4).contains(&z);
        if inside { 0.85 } else { 0.1 + 0.02 * ((x + y + z) % 3) as f64 }
    })?;
    for kind in [LossKind::Tversky, LossKind::CrossEntropy, LossKind::Wlt, LossKind::TverskyCe, LossKind::Combined] {
        let o = Objective::with_defaults(kind);
        let r = o.evaluate(std::slice::from_ref(&gt), std::slice::from_ref(&pred), None, true)?;
        let g = r.gradients.unwrap().remove(0);
        let small_lesion_grad = g.get(10, 10, 4);
        let err = grad_check(&o, &gt, &pred, 1e-4)?;
        println!("{kind:>10}: loss {:>9.5}  dL/dp at the missed voxel {small_lesion_grad:>10.4e}  grad check {err:.1e}", r.value);
    }
    Ok(())
}
