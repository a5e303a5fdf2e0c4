//! Command-line front end over the `salw` library.
//!
//! Exit codes: 0 on success, 1 for usage or parameter errors, 2 for data
//! errors (missing or malformed files, shape mismatches, undefined metrics).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use salw::config::{format_sig6 as g6, KeyValues};
use salw::loss::{grad_check_sampled, LossKind, Objective, TpWeighting, TverskyParams, GRAD_CHECK_SAMPLES, GRAD_CHECK_STEP};
use salw::metrics::{hausdorff_percentile, read_outcomes, write_outcomes, MetricReport};
use salw::synth::{generate, save_phantom, shrink, PhantomRecord, PhantomSpec};
use salw::trainer::{evaluate_lesionwise, lesion_mixture_template, train, CorpusSpec, TrainConfig, VoxelScorer};
use salw::weighting::build_weight_map_with_units;
use salw::{
    apply_empty_fallback, auc, dice, hausdorff, kappa, label_components, load_mask, load_volume, save_volume,
    Connectivity, Error, GridShape, VolumeUnits, WeightCurveParams,
};

#[derive(Parser)]
#[command(name = "salw", version, about = "Size-adaptive lesion weighting toolkit")]
struct Cli {
    /// Flat key=value file supplying parameter defaults; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap on worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Label lesions (connected components) of a mask.
    Label {
        #[arg(long)]
        gt: PathBuf,
        /// Write labels as an f32 volume.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        lesion: LesionArgs,
    },
    /// Build the per-voxel lesion weight map of a mask.
    Weights {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        lesion: LesionArgs,
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Evaluate a loss; repeat --gt/--pred for a batch.
    Loss {
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        /// Write d(loss)/d(pred) as an f32 volume (single case only).
        #[arg(long)]
        grad_out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        step: Option<f64>,
        /// Number of voxels probed.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Segmentation metrics of two masks and/or case-level metrics of an outcome CSV.
    Metrics {
        /// Reference mask.
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        /// Predicted mask.
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// CSV with columns case_id,score,label,empty_seg.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        /// Directory holding <case_id>.vhdr segmentations; empty ones force score 0.
        #[arg(long, requires = "outcomes")]
        seg_dir: Option<PathBuf>,
        /// Write the outcomes after the empty-segmentation fallback.
        #[arg(long, requires = "outcomes")]
        write_outcomes: Option<PathBuf>,
        /// Score threshold for kappa [default: 0.5].
        #[arg(long)]
        kappa_threshold: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a phantom: <stem>_image, <stem>_truth and <stem>_spec.json.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "phantom")]
        stem: String,
        #[command(flatten)]
        phantom: PhantomArgs,
    },
    /// Regenerate a phantom from its spec sidecar, shrunk by a factor.
    Shrink {
        /// The <stem>_spec.json sidecar written by `synth`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "shrunk")]
        stem: String,
    },
    /// Train the voxel scorer on a generated corpus.
    Train {
        #[command(flatten)]
        loss: LossArgs,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Seed of the initial parameters.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of training phantoms [default: 40].
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        phantom: PhantomArgs,
        /// Model parameter file (f32 vector volume).
        #[arg(long)]
        out_model: PathBuf,
        /// Training log CSV (epoch,loss).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Lesion-wise recall of a trained scorer on a generated corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Number of evaluation phantoms [default: 20].
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        phantom: PhantomArgs,
        /// Probability threshold [default: 0.5].
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Args)]
struct LesionArgs {
    /// Lesion adjacency: 6, 18 or 26 [default: 26].
    #[arg(long)]
    connectivity: Option<String>,
    /// Lesion volume fed to the weight curve: voxels or mm3 [default: voxels].
    #[arg(long)]
    units: Option<String>,
}

#[derive(Args)]
struct CurveArgs {
    /// Weight of vanishingly small lesions [default: 10].
    #[arg(long)]
    w_max: Option<f64>,
    /// Weight of very large lesions and of background [default: 1].
    #[arg(long)]
    w_min: Option<f64>,
    /// Volume scale of the weight curve [default: 350].
    #[arg(long)]
    vrange: Option<f64>,
    /// Steepness of the weight curve [default: 7].
    #[arg(long)]
    k: Option<f64>,
    /// Horizontal shift of the weight curve [default: sqrt(e^7)].
    #[arg(long)]
    a_shift: Option<f64>,
}

#[derive(Args)]
struct LossArgs {
    /// tversky, ce, wlt, tversky+ce or combined [default: combined].
    #[arg(long)]
    kind: Option<String>,
    /// False-positive coefficient [default: 0.3].
    #[arg(long)]
    alpha: Option<f64>,
    /// False-negative coefficient [default: 1].
    #[arg(long)]
    beta: Option<f64>,
    /// Smoothing constant [default: 1 for tversky, 1e-6 for the WLT losses].
    #[arg(long)]
    smooth: Option<f64>,
    /// Cross-entropy share of the combined losses [default: 0.5 (assumed)].
    #[arg(long)]
    lambda: Option<f64>,
    /// Which TP sums the lesion weights multiply: numerator or both [default: numerator].
    #[arg(long)]
    tp_weighting: Option<String>,
    /// Cross-entropy probability clamp [default: 1e-7].
    #[arg(long)]
    ce_clamp: Option<f64>,
    #[command(flatten)]
    lesion: LesionArgs,
    #[command(flatten)]
    curve: CurveArgs,
}

#[derive(Args)]
struct PhantomArgs {
    /// Grid size X,Y,Z [default: 24,24,24].
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Voxel spacing in mm [default: 1,1,1].
    #[arg(long, value_delimiter = ',')]
    spacing: Option<Vec<f64>>,
    #[arg(long)]
    n_lesions: Option<usize>,
    #[arg(long)]
    radius_min: Option<f64>,
    #[arg(long)]
    radius_max: Option<f64>,
    #[arg(long)]
    frag_prob: Option<f64>,
    #[arg(long)]
    frag_min: Option<usize>,
    #[arg(long)]
    frag_max: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
    /// Seed of the (first) phantom.
    #[arg(long)]
    phantom_seed: Option<u64>,
}

/// Flag, else config key, else nothing.
struct Resolver {
    cfg: KeyValues,
}

impl Resolver {
    fn get<T>(&self, flag: Option<T>, key: &str) -> salw::Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.cfg.get(key),
        }
    }

    fn parsed<T>(&self, flag: Option<&str>, key: &str) -> salw::Result<Option<T>>
    where
        T: FromStr<Err = Error>,
    {
        match flag {
            Some(s) => s.parse().map(Some),
            None => self.cfg.get_str(key).map(str::parse).transpose(),
        }
    }

    fn list<T>(&self, flag: Option<Vec<T>>, key: &str) -> salw::Result<Option<[T; 3]>>
    where
        T: FromStr + Copy,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.cfg.get_str(key) {
                None => return Ok(None),
                Some(s) => s
                    .split(',')
                    .map(|p| p.trim().parse::<T>().map_err(|e| Error::InvalidParam(format!("config key {key}: {e}"))))
                    .collect::<salw::Result<_>>()?,
            },
        };
        let arr: [T; 3] =
            v.try_into().map_err(|_| Error::InvalidParam(format!("{key} needs exactly three values")))?;
        Ok(Some(arr))
    }

    fn connectivity(&self, a: &LesionArgs) -> salw::Result<Connectivity> {
        Ok(self.parsed(a.connectivity.as_deref(), "connectivity")?.unwrap_or_default())
    }

    fn units(&self, a: &LesionArgs) -> salw::Result<VolumeUnits> {
        Ok(self.parsed(a.units.as_deref(), "units")?.unwrap_or_default())
    }

    fn curve(&self, a: &CurveArgs) -> salw::Result<WeightCurveParams> {
        let d = WeightCurveParams::default();
        let p = WeightCurveParams {
            w_max: self.get(a.w_max, "w_max")?.unwrap_or(d.w_max),
            w_min: self.get(a.w_min, "w_min")?.unwrap_or(d.w_min),
            vrange: self.get(a.vrange, "vrange")?.unwrap_or(d.vrange),
            k: self.get(a.k, "k")?.unwrap_or(d.k),
            a_shift: self.get(a.a_shift, "a_shift")?.unwrap_or(d.a_shift),
        };
        p.validate()?;
        Ok(p)
    }

    fn objective(&self, a: &LossArgs) -> salw::Result<Objective> {
        let kind: LossKind = self.parsed(a.kind.as_deref(), "kind")?.unwrap_or(LossKind::Combined);
        let mut o = Objective::with_defaults(kind);
        let t = o.params.tversky;
        o.params.tversky = TverskyParams {
            alpha: self.get(a.alpha, "alpha")?.unwrap_or(t.alpha),
            beta: self.get(a.beta, "beta")?.unwrap_or(t.beta),
            smooth: self.get(a.smooth, "smooth")?.unwrap_or(t.smooth),
        };
        o.params.lambda = self.get(a.lambda, "lambda")?.unwrap_or(o.params.lambda);
        o.params.tp_weighting =
            self.parsed::<TpWeighting>(a.tp_weighting.as_deref(), "tp_weighting")?.unwrap_or_default();
        o.params.ce_clamp = self.get(a.ce_clamp, "ce_clamp")?.unwrap_or(o.params.ce_clamp);
        o.params.connectivity = self.connectivity(&a.lesion)?;
        o.params.units = self.units(&a.lesion)?;
        o.params.curve = self.curve(&a.curve)?;
        o.params.validate()?;
        Ok(o)
    }

    fn phantom(&self, a: &PhantomArgs, default_seed: u64) -> salw::Result<PhantomSpec> {
        let d = lesion_mixture_template(default_seed);
        let dims = self.list(a.dims.clone(), "dims")?.unwrap_or(d.shape.dims());
        let spacing = self.list(a.spacing.clone(), "spacing")?.unwrap_or(d.shape.spacing());
        let spec = PhantomSpec {
            shape: GridShape::new(dims, spacing).map_err(|e| Error::InvalidParam(e.to_string()))?,
            n_lesions: self.get(a.n_lesions, "n_lesions")?.unwrap_or(d.n_lesions),
            radius_range_vox: (
                self.get(a.radius_min, "radius_min")?.unwrap_or(d.radius_range_vox.0),
                self.get(a.radius_max, "radius_max")?.unwrap_or(d.radius_range_vox.1),
            ),
            fragmentation_prob: self.get(a.frag_prob, "frag_prob")?.unwrap_or(d.fragmentation_prob),
            fragments_per_lesion: (
                self.get(a.frag_min, "frag_min")?.unwrap_or(d.fragments_per_lesion.0),
                self.get(a.frag_max, "frag_max")?.unwrap_or(d.fragments_per_lesion.1),
            ),
            noise_sigma: self.get(a.noise_sigma, "noise_sigma")?.unwrap_or(d.noise_sigma),
            contrast: self.get(a.contrast, "contrast")?.unwrap_or(d.contrast),
            seed: self.get(a.phantom_seed, "phantom_seed")?.unwrap_or(d.seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

const DEFAULT_TRAIN_SEED: u64 = 1000;
const DEFAULT_EVAL_SEED: u64 = 1500;

fn print_kv(key: &str, value: f64) {
    println!("{key}={}", g6(value));
}

fn run(cli: Cli) -> salw::Result<()> {
    let cfg = match &cli.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let r = Resolver { cfg };

    match cli.command {
        Command::Label { gt, out, lesion } => {
            let mask = load_mask(&gt)?;
            let l = label_components(&mask, r.connectivity(&lesion)?);
            println!("lesions={}", l.num_lesions());
            let vols: Vec<String> = l.volumes().iter().map(usize::to_string).collect();
            println!("volumes_vox={}", vols.join(","));
            if let Some(out) = out {
                save_volume(&l.to_volume(), out)?;
            }
        }
        Command::Weights { gt, out, lesion, curve } => {
            let mask = load_mask(&gt)?;
            let l = label_components(&mask, r.connectivity(&lesion)?);
            let w = build_weight_map_with_units(&l, &r.curve(&curve)?, r.units(&lesion)?)?;
            println!("lesions={}", l.num_lesions());
            print_kv("max_weight", w.weights().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            print_kv("min_weight", w.weights().iter().cloned().fold(f64::INFINITY, f64::min));
            if let Some(out) = out {
                save_volume(&w.to_volume(), out)?;
            }
        }
        Command::Loss { loss, gt, pred, grad_out } => {
            let objective = r.objective(&loss)?;
            if gt.len() != pred.len() {
                return Err(Error::InvalidParam(format!("{} --gt but {} --pred", gt.len(), pred.len())));
            }
            if grad_out.is_some() && gt.len() != 1 {
                return Err(Error::InvalidParam("--grad-out needs a single case".into()));
            }
            let gts = gt.iter().map(load_mask).collect::<salw::Result<Vec<_>>>()?;
            let preds = pred.iter().map(load_volume).collect::<salw::Result<Vec<_>>>()?;
            let report = objective.evaluate(&gts, &preds, None, grad_out.is_some())?;
            print_kv("loss", report.value);
            if let (Some(out), Some(g)) = (grad_out, report.gradients) {
                save_volume(&g[0], out)?;
            }
        }
        Command::Gradcheck { loss, gt, pred, step, samples } => {
            let objective = r.objective(&loss)?;
            let step = r.get(step, "step")?.unwrap_or(GRAD_CHECK_STEP);
            let samples = r.get(samples, "samples")?.unwrap_or(GRAD_CHECK_SAMPLES);
            let err = grad_check_sampled(&objective, &load_mask(&gt)?, &load_volume(&pred)?, step, samples)?;
            print_kv("max_rel_error", err);
        }
        Command::Metrics { a, b, outcomes, seg_dir, write_outcomes: out_csv, kappa_threshold, json } => {
            if a.is_none() && outcomes.is_none() {
                return Err(Error::InvalidParam("metrics needs --a/--b masks and/or --outcomes".into()));
            }
            let mut report = MetricReport::default();
            let mut undefined = Vec::new();
            if let (Some(a), Some(b)) = (a, b) {
                let (ma, mb) = (load_mask(a)?, load_mask(b)?);
                report.dice = Some(dice(&ma, &mb)?);
                match hausdorff(&ma, &mb) {
                    Ok(h) => {
                        report.hausdorff_mm = Some(h);
                        report.hd95_mm = Some(hausdorff_percentile(&ma, &mb, 95.0)?);
                    }
                    Err(Error::UndefinedMetric(_)) => undefined.extend(["hausdorff_mm", "hd95_mm"]),
                    Err(e) => return Err(e),
                }
            }
            if let Some(path) = outcomes {
                let mut cases = read_outcomes(path)?;
                if let Some(dir) = seg_dir {
                    for c in cases.iter_mut() {
                        let seg = load_mask(dir.join(format!("{}.vhdr", c.case_id)))?;
                        *c = apply_empty_fallback(&seg, c);
                    }
                }
                match auc(&cases) {
                    Ok(v) => report.auc = Some(v),
                    Err(Error::UndefinedMetric(_)) => undefined.push("auc"),
                    Err(e) => return Err(e),
                }
                let t = r.get(kappa_threshold, "kappa_threshold")?.unwrap_or(0.5);
                report.kappa = Some(kappa(&cases, t)?);
                println!("cases={}", cases.len());
                println!("empty_segmentations={}", cases.iter().filter(|c| c.empty_segmentation).count());
                if let Some(out) = out_csv {
                    write_outcomes(out, &cases)?;
                }
            }
            print!("{}", report.to_key_values(g6));
            for key in undefined {
                println!("{key}=undefined");
            }
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Synth { out_dir, stem, phantom } => {
            let spec = r.phantom(&phantom, 0)?;
            let p = generate(&spec)?;
            create_dir(&out_dir)?;
            save_phantom(&p, &out_dir, &stem)?;
            let l = label_components(&p.truth, Connectivity::TwentySix);
            println!("lesions={}", l.num_lesions());
            println!("foreground_vox={}", p.truth.count());
        }
        Command::Shrink { spec, factor, out_dir, stem } => {
            let p = PhantomRecord::load(&spec)?.build()?;
            let s = shrink(&p, factor)?;
            create_dir(&out_dir)?;
            save_phantom(&s, &out_dir, &stem)?;
            println!("foreground_vox_before={}", p.truth.count());
            println!("foreground_vox_after={}", s.truth.count());
        }
        Command::Train { loss, lr, epochs, seed, count, phantom, out_model, log } => {
            let cfg = TrainConfig {
                objective: r.objective(&loss)?,
                learning_rate: r.get(lr, "lr")?.unwrap_or(1.0),
                epochs: r.get(epochs, "epochs")?.unwrap_or(200),
                seed: r.get(seed, "seed")?.unwrap_or(0),
                train: CorpusSpec {
                    template: r.phantom(&phantom, DEFAULT_TRAIN_SEED)?,
                    count: r.get(count, "count")?.unwrap_or(40),
                },
                val: None,
            };
            let out = train(&cfg)?;
            out.model.save(&out_model)?;
            if let Some(path) = log {
                let mut buf = Vec::new();
                out.write_log(&mut buf, g6).expect("write to memory");
                fs::write(&path, buf).map_err(|e| Error::Io { path, source: e })?;
            }
            if let Some(last) = out.losses.last() {
                print_kv("final_loss", *last);
            }
            let params: Vec<String> = out.model.params.iter().map(|&p| g6(p)).collect();
            println!("params={}", params.join(","));
        }
        Command::Eval { model, count, phantom, threshold } => {
            let model = VoxelScorer::load(&model)?;
            let corpus = CorpusSpec {
                template: r.phantom(&phantom, DEFAULT_EVAL_SEED)?,
                count: r.get(count, "count")?.unwrap_or(20),
            };
            let t = r.get(threshold, "threshold")?.unwrap_or(0.5);
            let report = evaluate_lesionwise(&model, &corpus.generate()?, t)?;
            for (name, b) in report.buckets() {
                println!("{name}_total={}", b.total);
                println!("{name}_detected={}", b.detected);
                match b.recall() {
                    Some(v) => print_kv(&format!("{name}_recall"), v),
                    None => println!("{name}_recall=undefined"),
                }
            }
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> salw::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParam(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
