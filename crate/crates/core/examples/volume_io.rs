//! Write a probability volume and a mask to disk, read them back, threshold.

use salw::{load_mask, load_volume, save_mask, save_volume, threshold, GridShape, Volume};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("salw-volume-io");
    std::fs::create_dir_all(&dir)?;

    let shape = GridShape::new([16, 12, 8], [0.8, 0.8, 2.0])?;
    let c = [7.5, 5.5, 3.5];
    let prob = Volume::from_fn(shape, |[x, y, z]| {
        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + 4.0 * (z as f64 - c[2]).powi(2);
        (-d2 / 18.0).exp()
    })?;
    save_volume(&prob, dir.join("prob.vhdr"))?;
    let back = load_volume(dir.join("prob.vhdr"))?;
    let max_err = prob.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("f32 round trip: max error {max_err:.2e}");

    let mask = threshold(&back, 0.5)?;
    save_mask(&mask, dir.join("mask.vhdr"))?;
    let mask_back = load_mask(dir.join("mask.vhdr"))?;
    println!("mask: {} voxels, {:.1} mm3, round trip exact: {}", mask.count(), mask.count() as f64 * shape.voxel_volume(), mask == mask_back);
    println!("header:\n{}", std::fs::read_to_string(dir.join("mask.vhdr"))?);
    Ok(())
}
