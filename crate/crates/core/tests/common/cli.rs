//! Drives the `salw` binary on a fixed set of fixtures.

use salw::volume::{save_mask, save_volume};
use salw::{GridShape, Mask, Volume};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn salw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salw")).args(args).output().expect("salw runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// The value printed for `key` in key=value output.
pub fn value(o: &Output, key: &str) -> Option<String> {
    stdout(o).lines().find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

pub struct Fixtures {
    pub dir: PathBuf,
}

impl Fixtures {
    pub fn write(dir: &Path) -> Fixtures {
        let line = GridShape::with_dims([7, 1, 1]).unwrap();
        let gt4 = Mask::new(line, vec![true, true, true, true, false, false, false]).unwrap();
        let pred4 = Volume::new(line, vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        save_mask(&gt4, dir.join("gt4.vhdr")).unwrap();
        save_volume(&pred4, dir.join("pred4.vhdr")).unwrap();

        let grid = GridShape::new([8, 8, 8], [1.0, 1.0, 2.0]).unwrap();
        let cube = Mask::from_fn(grid, |[x, y, z]| (2..4).contains(&x) && (2..4).contains(&y) && (2..4).contains(&z));
        save_mask(&cube, dir.join("cube.vhdr")).unwrap();
        let two = Mask::from_fn(grid, |[x, y, z]| {
            (2..4).contains(&x) && (2..5).contains(&y) && (2..4).contains(&z) || (x == 6 && y == 6)
        });
        save_mask(&two, dir.join("two.vhdr")).unwrap();
        let soft = Volume::from_fn(grid, |[x, y, z]| ((x * 7 + y * 3 + z * 5) % 11) as f64 / 10.0 * 0.9 + 0.05).unwrap();
        save_volume(&soft, dir.join("soft.vhdr")).unwrap();

        let segs = dir.join("segs");
        fs::create_dir_all(&segs).unwrap();
        let mut csv = String::from("case_id,score,label,empty_seg\n");
        for i in 0..8 {
            let score = [0.9, 0.2, 0.7, 0.4, 0.8, 0.1, 0.6, 0.3][i];
            csv += &format!("c{i},{score},{},0\n", (i + 1) % 2);
            let seg = if i == 0 || i == 5 { Mask::empty(grid) } else { cube.clone() };
            save_mask(&seg, segs.join(format!("c{i}.vhdr"))).unwrap();
        }
        fs::write(dir.join("outcomes.csv"), csv).unwrap();
        Fixtures { dir: dir.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> String {
        self.dir.join(name).to_string_lossy().into_owned()
    }
}

/// One invocation per subcommand, every file it writes under `out`.
pub fn all_subcommands(fx: &Fixtures, out: &Path) -> Vec<Vec<String>> {
    let o = |name: &str| out.join(name).to_string_lossy().into_owned();
    let p = |name: &str| fx.path(name);
    let phantom = ["--dims", "16,16,16", "--n-lesions", "2", "--radius-min", "1.5", "--radius-max", "3"];
    let mut runs: Vec<Vec<String>> = vec![
        vec!["label".into(), "--gt".into(), p("two.vhdr"), "--out".into(), o("labels.vhdr")],
        vec!["weights".into(), "--gt".into(), p("two.vhdr"), "--out".into(), o("omega.vhdr")],
        vec!["loss".into(), "--gt".into(), p("two.vhdr"), "--pred".into(), p("soft.vhdr"), "--grad-out".into(), o("grad.vhdr")],
        vec!["gradcheck".into(), "--kind".into(), "wlt".into(), "--gt".into(), p("two.vhdr"), "--pred".into(), p("soft.vhdr")],
        vec![
            "metrics".into(), "--a".into(), p("cube.vhdr"), "--b".into(), p("two.vhdr"), "--outcomes".into(),
            p("outcomes.csv"), "--seg-dir".into(), p("segs"), "--write-outcomes".into(), o("fallback.csv"),
            "--json".into(), o("metrics.json"),
        ],
        vec!["shrink".into(), "--spec".into(), o("ph_spec.json"), "--factor".into(), "0.6".into(), "--out-dir".into(), o("")],
        vec!["eval".into(), "--model".into(), o("model.vhdr"), "--count".into(), "3".into(), "--phantom-seed".into(), "77".into()],
    ];
    let mut synth = vec!["synth".to_string(), "--out-dir".into(), o(""), "--stem".into(), "ph".into()];
    synth.extend(phantom.iter().map(|s| s.to_string()));
    runs.insert(5, synth);
    let small_mixture =
        ["--dims", "16,16,16", "--n-lesions", "1", "--radius-min", "2", "--radius-max", "3", "--frag-min", "3", "--frag-max", "5"];
    let mut train: Vec<String> = ["train", "--epochs", "15", "--count", "4"].iter().map(|s| s.to_string()).collect();
    train.extend(small_mixture.iter().map(|s| s.to_string()));
    train.extend(["--out-model".into(), o("model.vhdr"), "--log".into(), o("train.csv")]);
    runs.insert(7, train);
    runs[8].extend(small_mixture.iter().map(|s| s.to_string()));
    runs
}

/// Stdout of every run plus the bytes of every produced file.
pub fn run_all(fx: &Fixtures, out: &Path, threads: Option<usize>) -> BTreeMap<String, Vec<u8>> {
    if out.exists() {
        fs::remove_dir_all(out).unwrap();
    }
    fs::create_dir_all(out).unwrap();
    let mut artifacts = BTreeMap::new();
    for (i, run) in all_subcommands(fx, out).into_iter().enumerate() {
        let mut args: Vec<String> = threads.map(|n| vec!["--threads".into(), n.to_string()]).unwrap_or_default();
        args.extend(run.iter().cloned());
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let res = salw(&argv);
        assert!(res.status.success(), "{:?} failed: {}", run, String::from_utf8_lossy(&res.stderr));
        artifacts.insert(format!("{i:02}-{}.stdout", run[0]), res.stdout);
    }
    for entry in fs::read_dir(out).unwrap() {
        let path = entry.unwrap().path();
        artifacts.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    artifacts
}
