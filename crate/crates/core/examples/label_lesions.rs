//! Lesion counts and volumes under the three adjacency rules.

use salw::{label_components, Connectivity, GridShape, Mask};

fn main() -> salw::Result<()> {
    let shape = GridShape::new([10, 10, 4], [0.7, 0.7, 3.0])?;
    // a 3x3x2 block, a diagonal chain and an isolated voxel
    let mask = Mask::from_fn(shape, |[x, y, z]| {
        (1..4).contains(&x) && (1..4).contains(&y) && z < 2 || (x == y && x >= 5 && z == x % 2) || [x, y, z] == [8, 1, 3]
    });
    for conn in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
        let l = label_components(&mask, conn);
        let mm3: Vec<String> =
            (1..=l.num_lesions()).map(|id| format!("{:.2}", salw::components::lesion_volume_mm3(&l, &shape, id).unwrap())).collect();
        println!("{conn:?}: {} lesions, voxels {:?}, mm3 [{}]", l.num_lesions(), l.volumes(), mm3.join(", "));
    }
    Ok(())
}
