//! Acceptance suite. Run with `cargo test -p salw --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

mod common;

use common::cli::{run_all, Fixtures};
use common::{
    auc_oracle, dice_oracle, flood_fill_oracle, hausdorff_oracle, kappa_oracle, omega_reference, random_cases,
    same_partition, Rng,
};
use salw::loss::{LossKind, Objective, TverskyParams};
use salw::trainer::{evaluate_lesionwise, initial_params, lesion_mixture_template, CorpusSpec, TrainingSet, VoxelScorer};
use salw::weighting::{build_weight_map, WeightMap};
use salw::{
    apply_empty_fallback, auc, cross_entropy_loss, dice, hausdorff, kappa, label_components, tversky_loss, wlt_loss,
    combined_loss, CombinedParams, Connectivity, GridShape, Mask, Volume, WeightCurveParams,
};
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn weight_curve() -> Verdict {
    let p = WeightCurveParams::default();
    for (v, printed) in [(0.0, 9.736190), (175.0, 5.5), (350.0, 1.263810)] {
        let got = salw::omega(v, &p).map_err(|e| e.to_string())?;
        check((got - omega_reference(v)).abs() < 1e-6, format!("omega({v}) = {got}, reference {}", omega_reference(v)))?;
        check((got - printed).abs() < 1e-6, format!("omega({v}) = {got}, expected {printed}"))?;
    }
    check(p.weight(175.0) == 5.5, "midpoint is not exactly 5.5")?;
    for d in [0.0, 50.0, 100.0, 170.0] {
        let s = p.weight(175.0 - d) + p.weight(175.0 + d);
        check((s - 11.0).abs() < 1e-9, format!("symmetry at d={d}: {s}"))?;
    }
    Ok("3 values within 1e-6, symmetry within 1e-9".into())
}

/// Largest relative gap between the analytic gradient and central differences
/// taken over every voxel.
fn gradient_gap(o: &Objective, gt: &Mask, pred: &Volume) -> f64 {
    let grad = o.evaluate(std::slice::from_ref(gt), std::slice::from_ref(pred), None, true).unwrap().gradients.unwrap().remove(0);
    let value = |data: Vec<f64>| {
        o.evaluate(std::slice::from_ref(gt), &[Volume::new(*pred.shape(), data).unwrap()], None, false).unwrap().value
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..pred.data().len() {
        let mut up = pred.data().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let numeric = (value(up) - value(down)) / (2.0 * h);
        let analytic = grad.data()[i];
        let scale = numeric.abs().max(analytic.abs()).max(1e-7);
        worst = worst.max((numeric - analytic).abs() / scale);
    }
    worst
}

fn gradient_suite() -> Verdict {
    let mut rng = Rng::new(2);
    let shape = GridShape::with_dims([6, 6, 6]).unwrap();
    let mut worst = 0.0f64;
    for kind in [LossKind::Tversky, LossKind::CrossEntropy, LossKind::Wlt, LossKind::Combined] {
        let o = Objective::with_defaults(kind);
        for case in 0..20 {
            let density = rng.range(0.05, 0.4);
        let gt = rng.mask(shape, density);
            let pred = rng.probs(shape, 0.05, 0.95);
            let gap = gradient_gap(&o, &gt, &pred);
            check(gap < 1e-4, format!("{kind} instance {case}: relative error {gap:.3e}"))?;
            worst = worst.max(gap);
        }
    }
    Ok(format!("80 instances, worst relative error {worst:.2e}"))
}

fn worked_examples() -> Verdict {
    let line = |n| GridShape::with_dims([n, 1, 1]).unwrap();

    // Tversky: 8 lesion voxels, 4 hit, nothing else predicted
    let gt = Mask::new(line(12), (0..12).map(|i| i < 8).collect()).unwrap();
    let pred = Volume::new(line(12), (0..12).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect()).unwrap();
    let (tp, fp, fn_, s, alpha, beta) = (4.0f64, 0.0, 4.0, 1.0, 0.3, 1.0);
    let oracle = 1.0 - (s + tp) / (s + tp + alpha * fp + beta * fn_);
    let got = tversky_loss(&gt, &pred, &TverskyParams::default(), false).unwrap().value;
    check((oracle - 4.0 / 9.0).abs() < 1e-12, "hand value of the Tversky example is not 4/9")?;
    check((got - oracle).abs() < 1e-5, format!("tversky {got} vs {oracle}"))?;

    // WLT: 4-voxel lesion, two voxels hit, one false positive
    let gt = Mask::new(line(7), vec![true, true, true, true, false, false, false]).unwrap();
    let pred = Volume::new(line(7), vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let w = omega_reference(4.0);
    let eps = 1e-6;
    let wlt_oracle = -(eps + 2.0 * w) / (eps + 2.0 + 0.3 * 1.0 + 1.0 * 2.0 * w);
    let omega = build_weight_map(&label_components(&gt, Connectivity::TwentySix), &WeightCurveParams::default()).unwrap();
    let got = wlt_loss(&gt, &pred, &omega, &TverskyParams::wlt_default(), false).unwrap().value;
    check((wlt_oracle + 0.89416).abs() < 1e-5, format!("hand value of the WLT example is {wlt_oracle}"))?;
    check((got - wlt_oracle).abs() < 1e-5, format!("wlt {got} vs {wlt_oracle}"))?;

    // CE: p = 1/2 everywhere
    let half = Volume::filled(line(7), 0.5);
    let got = cross_entropy_loss(&gt, &half, false).unwrap().value;
    check((got - std::f64::consts::LN_2).abs() < 1e-5, format!("ce {got}"))?;

    // the combined loss at lambda 1/2 on the WLT example
    let ce = -(3.0 * (1e-7f64).ln() + 4.0 * (1.0f64 - 1e-7).ln()) / 7.0;
    let got = combined_loss(&gt, &pred, &CombinedParams::default(), false).unwrap().value;
    check((got - (0.5 * ce + 0.5 * wlt_oracle)).abs() < 1e-5, format!("combined {got}"))?;
    Ok(format!("tversky {:.6}, wlt {:.6}, ce {:.6}", 4.0 / 9.0, wlt_oracle, std::f64::consts::LN_2))
}

fn equivalences() -> Verdict {
    let mut rng = Rng::new(4);
    let (mut idx, mut bg, mut aff) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..50 {
        let shape = rng.shape(8);
        let density = rng.range(0.0, 0.5);
        let gt = rng.mask(shape, density);
        let pred = rng.probs(shape, 0.0, 1.0);
        let p = TverskyParams { alpha: rng.range(0.0, 1.0), beta: rng.range(0.1, 2.0), smooth: 1e-6 };

        let (tp, fp, fn_) = gt.data().iter().zip(pred.data()).fold((0.0, 0.0, 0.0), |(tp, fp, fn_), (&g, &q)| {
            if g {
                (tp + q, fp, fn_ + 1.0 - q)
            } else {
                (tp, fp + q, fn_)
            }
        });
        let index = (p.smooth + tp) / (p.smooth + tp + p.alpha * fp + p.beta * fn_);
        let ones = WeightMap::uniform(shape, 1.0).unwrap();
        let v = wlt_loss(&gt, &pred, &ones, &p, false).unwrap().value;
        idx = idx.max((v + index).abs());

        let base = build_weight_map(&label_components(&gt, Connectivity::TwentySix), &WeightCurveParams::default()).unwrap();
        let moved: Vec<f64> =
            base.weights().iter().zip(gt.data()).map(|(&w, &g)| if g { w } else { rng.range(0.1, 100.0) }).collect();
        let moved = WeightMap::new(shape, moved).unwrap();
        let a = wlt_loss(&gt, &pred, &base, &p, false).unwrap().value;
        let b = wlt_loss(&gt, &pred, &moved, &p, false).unwrap().value;
        bg = bg.max((a - b).abs());

        let at = |lambda: f64| combined_loss(&gt, &pred, &CombinedParams { lambda, ..Default::default() }, false).unwrap().value;
        let lambda = rng.unit();
        aff = aff.max((at(lambda) - ((1.0 - lambda) * at(0.0) + lambda * at(1.0))).abs());
        check(idx < 1e-9 && bg < 1e-12 && aff < 1e-12, format!("instance {case}: {idx:.2e} {bg:.2e} {aff:.2e}"))?;
    }
    Ok(format!("max gaps: index {idx:.1e}, background {bg:.1e}, affine {aff:.1e}"))
}

fn components() -> Verdict {
    let mut rng = Rng::new(5);
    for case in 0..200 {
        let shape = rng.shape(12);
        let density = rng.range(0.05, 0.5);
        let m = rng.mask(shape, density);
        for (c, man) in [(Connectivity::Six, 1), (Connectivity::TwentySix, 3)] {
            let l = label_components(&m, c);
            check(same_partition(l.labels(), &flood_fill_oracle(&m, man)), format!("mask {case} differs at {c:?}"))?;
        }
    }
    Ok("200 masks, 6- and 26-connectivity".into())
}

fn metrics() -> Verdict {
    let mut rng = Rng::new(6);
    for case in 0..100 {
        let shape = GridShape::new([1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(5)], [1.0, rng.range(0.5, 2.0), 2.5])
            .unwrap();
        let density = rng.range(0.05, 0.5);
        let a = rng.mask(shape, density);
        let density = rng.range(0.05, 0.5);
        let b = rng.mask(shape, density);
        check(dice(&a, &b).unwrap() == dice_oracle(&a, &b), format!("dice {case}"))?;
        if !a.is_empty() && !b.is_empty() {
            let h = hausdorff(&a, &b).unwrap();
            check((h - hausdorff_oracle(&a, &b)).abs() < 1e-9, format!("hausdorff {case}"))?;
        }
        let n = 5 + rng.below(40);
        let cases = random_cases(&mut rng, n);
        if cases.iter().any(|c| c.label) && cases.iter().any(|c| !c.label) {
            check(auc(&cases).unwrap() == auc_oracle(&cases), format!("auc {case}"))?;
        }
        let t = rng.below(11) as f64 / 10.0;
        check(kappa(&cases, t).unwrap() == kappa_oracle(&cases, t), format!("kappa {case}"))?;
    }

    // the empty-segmentation fallback
    let shape = GridShape::with_dims([4, 4, 4]).unwrap();
    let seg = |empty: bool| Mask::from_fn(shape, |[x, y, z]| !empty && x + y + z < 3);
    let cases: Vec<_> = [(0.9, true, true), (0.8, true, false), (0.3, false, false), (0.2, false, false)]
        .iter()
        .enumerate()
        .map(|(i, &(s, l, _))| salw::CaseOutcome::new(format!("c{i}"), s, l).unwrap())
        .collect();
    let after: Vec<_> = cases.iter().enumerate().map(|(i, c)| apply_empty_fallback(&seg(i == 0), c)).collect();
    check(after[0].score == 0.0 && after[0].empty_segmentation, "empty segmentation kept its score")?;
    check(after[1..] == cases[1..], "non-empty segmentations changed")?;
    let (before, fallback) = (auc(&cases).unwrap(), auc(&after).unwrap());
    check(before == 1.0 && fallback == 0.5 && fallback == auc_oracle(&after), format!("auc {before} -> {fallback}"))?;
    Ok(format!("100 instances each; fallback moves AUC {before} -> {fallback}"))
}

/// Train template seed, test template seed and initial-parameter seed.
const SEED_TRIPLETS: [(u64, u64, u64); 3] = [(1000, 1500, 0), (2000, 2500, 1), (3000, 3500, 2)];

fn small_lesion_ab() -> Verdict {
    let mut lines = Vec::new();
    for (train_seed, test_seed, init_seed) in SEED_TRIPLETS {
        let train = CorpusSpec { template: lesion_mixture_template(train_seed), count: 40 }.generate().unwrap();
        let test = CorpusSpec { template: lesion_mixture_template(test_seed), count: 20 }.generate().unwrap();
        let mut recall = Vec::new();
        for kind in [LossKind::Tversky, LossKind::Combined] {
            let o = Objective::with_defaults(kind);
            let (params, _) =
                TrainingSet::new(&train, &o).unwrap().fit(&o, initial_params(init_seed), 1.0, 200).map_err(|e| e.to_string())?;
            let r = evaluate_lesionwise(&VoxelScorer::new(params).unwrap(), &test, 0.5).unwrap();
            recall.push(r);
        }
        let (tv, wlt) = (&recall[0], &recall[1]);
        let small = |r: &salw::LesionRecallReport| r.small.recall().unwrap_or(0.0);
        let large = |r: &salw::LesionRecallReport| r.large.recall().unwrap_or(0.0);
        let line = format!(
            "seeds {train_seed}/{test_seed}/{init_seed}: small {}/{} vs {}/{}, large {}/{} vs {}/{}",
            wlt.small.detected, wlt.small.total, tv.small.detected, tv.small.total, wlt.large.detected, wlt.large.total,
            tv.large.detected, tv.large.total
        );
        check(tv.small.total > 0 && tv.large.total > 0, format!("{line}: a bucket is empty"))?;
        check(small(wlt) > small(tv), format!("{line}: small recall not higher"))?;
        check(large(tv) - large(wlt) <= 0.1, format!("{line}: large recall dropped"))?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixtures::write(dir.path());
    let out = dir.path().join("out");
    let reference = run_all(&fx, &out, None);
    for threads in [Some(1), Some(2), Some(5), None] {
        let again = run_all(&fx, &out, threads);
        for (name, bytes) in &reference {
            check(again.get(name) == Some(bytes), format!("{name} differs with --threads {threads:?}"))?;
        }
        check(again.len() == reference.len(), "different set of artifacts")?;
    }
    Ok(format!("{} artifacts identical over 5 runs", reference.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 8] = [
        ("1 weight curve", weight_curve, Some(Duration::from_secs(1))),
        ("2 gradients", gradient_suite, Some(Duration::from_secs(30))),
        ("3 worked examples", worked_examples, None),
        ("4 equivalences", equivalences, None),
        ("5 connected components", components, Some(Duration::from_secs(10))),
        ("6 metrics", metrics, None),
        ("7 small-lesion A/B", small_lesion_ab, Some(Duration::from_secs(300))),
        ("8 CLI determinism", cli_determinism, None),
    ];
    let mut failed = Vec::new();
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let mut verdict = run();
        let took = start.elapsed();
        if let (Ok(_), Some(b)) = (&verdict, budget) {
            if took > b {
                verdict = Err(format!("took {took:.2?}, budget {b:?}"));
            }
        }
        match verdict {
            Ok(detail) => println!("PASS criterion {name} ({took:.2?}): {detail}"),
            Err(why) => {
                println!("FAIL criterion {name} ({took:.2?}): {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
