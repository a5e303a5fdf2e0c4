//! Train the voxel scorer with plain Tversky and with the combined WLT loss,
//! then compare lesion-wise recall per size bucket.
//!
//! `cargo run --release --example small_lesion_ab -- [train_seed] [epochs]`

use salw::trainer::{lesion_mixture_template, CorpusSpec, TrainConfig};
use salw::loss::Objective;
use salw::{evaluate_lesionwise, train, LossKind};

fn main() -> salw::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1000);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(200);

    let test = CorpusSpec { template: lesion_mixture_template(seed + 500), count: 20 }.generate()?;
    for kind in [LossKind::Tversky, LossKind::Combined] {
        let cfg = TrainConfig {
            objective: Objective::with_defaults(kind),
            learning_rate: 1.0,
            epochs,
            seed: 0,
            train: CorpusSpec { template: lesion_mixture_template(seed), count: 40 },
            val: None,
        };
        let out = train(&cfg)?;
        let r = evaluate_lesionwise(&out.model, &test, 0.5)?;
        let buckets: Vec<String> = r.buckets().iter().map(|(n, b)| format!("{n} {}/{}", b.detected, b.total)).collect();
        println!("{kind:>8}: loss {:.4} -> {:.4}, recall {}", out.losses[0], out.losses.last().unwrap(), buckets.join(", "));
    }
    Ok(())
}
