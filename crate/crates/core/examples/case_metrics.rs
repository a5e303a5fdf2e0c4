//! Segmentation and case-level metrics, including the empty-segmentation fallback.

use salw::metrics::hausdorff_percentile;
use salw::{apply_empty_fallback, auc, dice, hausdorff, kappa, CaseOutcome, GridShape, Mask};

fn main() -> salw::Result<()> {
    let shape = GridShape::new([24, 24, 12], [0.7, 0.7, 2.0])?;
    let ball = |c: [f64; 3], r: f64| {
        Mask::from_fn(shape, move |[x, y, z]| {
            (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2) <= r * r
        })
    };
    let truth = ball([11.0, 11.0, 6.0], 5.0);
    let seg = ball([12.0, 11.0, 6.0], 4.5);
    println!("dice {:.4}", dice(&truth, &seg)?);
    println!("hausdorff {:.3} mm, hd95 {:.3} mm", hausdorff(&truth, &seg)?, hausdorff_percentile(&truth, &seg, 95.0)?);

    let scores = [(0.92, true), (0.81, true), (0.77, false), (0.64, true), (0.40, false), (0.35, true), (0.20, false), (0.05, false)];
    let cases: Vec<CaseOutcome> =
        scores.iter().enumerate().map(|(i, &(s, l))| CaseOutcome::new(format!("case{i}"), s, l)).collect::<Result<_, _>>()?;
    println!("auc {:.4}, kappa {:.4}", auc(&cases)?, kappa(&cases, 0.5)?);

    // case0's segmentation came back empty, so its score drops to 0
    let segs: Vec<Mask> = (0..cases.len()).map(|i| if i == 0 { Mask::empty(shape) } else { seg.clone() }).collect();
    let fallback: Vec<CaseOutcome> = cases.iter().zip(&segs).map(|(c, s)| apply_empty_fallback(s, c)).collect();
    println!("after fallback: auc {:.4}, kappa {:.4}", auc(&fallback)?, kappa(&fallback, 0.5)?);
    Ok(())
}
