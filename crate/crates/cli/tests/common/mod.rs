#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// 32×32 images with proportionally smaller corruption; everything else at
/// the defaults.
pub const COMPACT: [&str; 3] = ["input.size=32", "synth.size=32", "synth.max_radius=4"];

/// Runs `dsu` in-process with the given arguments and `--set` overrides.
pub fn dsu(args: &[&str], sets: &[&str]) -> dsu_cli::Result<()> {
    let mut v: Vec<String> = vec!["dsu".into()];
    v.extend(args.iter().map(|s| s.to_string()));
    for s in sets {
        v.push("--set".into());
        v.push(s.to_string());
    }
    dsu_cli::run(v)
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Rows of a CSV file as header-keyed maps.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|row| {
            let row = row.unwrap();
            header
                .iter()
                .cloned()
                .zip(row.iter().map(String::from))
                .collect()
        })
        .collect()
}

pub fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key]
        .parse()
        .unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

/// Mean eval MAE from a `metrics.csv`.
pub fn mean_mae(metrics: &Path) -> f64 {
    let rows = read_csv(metrics);
    let last = rows.last().expect("mean row");
    assert_eq!(last["id"], "mean");
    num(last, "mae")
}

/// Every file under `root`, keyed by its path relative to `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn copy_dir(from: &Path, to: &Path, skip: &str) {
    for (rel, bytes) in tree(from) {
        if rel.starts_with(skip) {
            continue;
        }
        let dest = to.join(rel);
        fs::create_dir_all(dest.parent().unwrap()).unwrap();
        fs::write(dest, bytes).unwrap();
    }
}

/// synth, init-labels and train into `<root>/data` and `<root>/run`.
pub fn pipeline(root: &Path, seed: u64, rounds: usize, sets: &[&str]) {
    let (data, run) = (root.join("data"), root.join("run"));
    let seed = seed.to_string();
    let rounds = rounds.to_string();
    dsu(&["--seed", &seed, "--out", p(&data), "synth"], sets).unwrap();
    dsu(
        &[
            "--seed",
            &seed,
            "--out",
            p(&run),
            "init-labels",
            "--data",
            p(&data),
        ],
        sets,
    )
    .unwrap();
    dsu(
        &[
            "--seed",
            &seed,
            "--out",
            p(&run),
            "train",
            "--data",
            p(&data),
            "--rounds",
            &rounds,
        ],
        sets,
    )
    .unwrap();
}
