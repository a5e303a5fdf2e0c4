//! Tabulate the lesion weight curve and build a weight map for two lesions.

use salw::weighting::build_weight_map_with_units;
use salw::{build_weight_map, label_components, omega, Connectivity, GridShape, Mask, VolumeUnits, WeightCurveParams};

fn main() -> salw::Result<()> {
    let p = WeightCurveParams::default();
    for v in [0.0, 4.0, 8.0, 20.0, 100.0, 175.0, 250.0, 350.0, 700.0] {
        println!("omega({v:>5}) = {:.6}", omega(v, &p)?);
    }

    let shape = GridShape::new([20, 20, 20], [0.5, 0.5, 0.5])?;
    let mask = Mask::from_fn(shape, |[x, y, z]| {
        x < 2 && y < 2 && z < 2 || (8..16).contains(&x) && (8..16).contains(&y) && (8..16).contains(&z)
    });
    let l = label_components(&mask, Connectivity::default());
    let by_voxels = build_weight_map(&l, &p)?;
    let by_mm3 = build_weight_map_with_units(&l, &p, VolumeUnits::Mm3)?;
    for id in 1..=l.num_lesions() {
        let i = l.labels().iter().position(|&x| x as usize == id).unwrap();
        println!(
            "lesion {id}: {} voxels -> weight {:.4} (counting voxels), {:.4} (counting mm3)",
            l.volumes()[id - 1],
            by_voxels.weights()[i],
            by_mm3.weights()[i]
        );
    }
    Ok(())
}
