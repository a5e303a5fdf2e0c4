//! Generate a phantom with fragmented lesions, save it, and shrink it.

use salw::synth::save_phantom;
use salw::{generate, label_components, shrink, Connectivity, GridShape, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec {
        n_lesions: 4,
        radius_range_vox: (2.0, 4.5),
        fragmentation_prob: 0.5,
        fragments_per_lesion: (3, 6),
        ..PhantomSpec::new(GridShape::with_dims([40, 40, 32])?, 42)
    };
    let p = generate(&spec)?;
    let out = std::env::temp_dir().join("salw-phantoms");
    std::fs::create_dir_all(&out)?;
    save_phantom(&p, &out, "demo")?;
    println!("saved to {}", out.display());
    for (i, lesion) in p.lesions.iter().enumerate() {
        println!("lesion {i}: {} blob(s), fragmented {}", lesion.blobs.len(), lesion.fragmented);
    }
    for factor in [1.0, 0.75, 0.5, 0.25] {
        let s = shrink(&p, factor)?;
        let l = label_components(&s.truth, Connectivity::default());
        println!("factor {factor:.2}: {:>5} foreground voxels in {:>2} components", s.truth.count(), l.num_lesions());
    }
    Ok(())
}
