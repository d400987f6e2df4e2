//! The five subcommands. Every file they produce is written atomically and
//! depends only on the config, the seed and the input files.

use std::path::{Path, PathBuf};

use dsu_core::field::resize_bilinear;
use dsu_core::label_update::refine;
use dsu_core::metrics::{self, evaluate, MetricsReport, THRESHOLDS};
use dsu_core::prior::simple_depth_prior_init;
use dsu_core::synth::{synth_generate, Split};
use dsu_core::trainer::{LabelProbe, PseudoLabelStore, RoundReport, TrainSample, Trainer};
use dsu_core::{RgbImage, ScalarField};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::image_io::{read_gray, read_rgb, write_atomic, write_gray, write_rgb, Purpose};
use crate::manifest::{
    ingest, load_label, load_sample, DatasetManifest, Entry, GroundTruth, SplitTag,
};

pub const EPOCHS_HEADER: [&str; 10] = [
    "round", "epoch", "step", "l_sal", "d_l1", "d_l2", "d_sal", "d_nonsal", "d_con", "d_total",
];
pub const ROUNDS_HEADER: [&str; 4] = ["round", "updated", "label_mae_before", "label_mae_after"];
pub const LABELS_HEADER: [&str; 4] = ["id", "round", "path", "mae"];
pub const METRICS_HEADER: [&str; 6] = ["id", "mae", "f_max", "f_mean", "f_weighted", "e_measure"];
pub const CURVE_HEADER: [&str; 3] = ["index", "threshold", "f"];

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Data(format!("csv: {e}")))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_config(out: &Path, cfg: &Config) -> Result<()> {
    write_atomic(&out.join("config.txt"), cfg.emit().as_bytes())
}

/// Writes the synthetic corpus as a dataset directory.
pub fn synth(cfg: &Config, out: &Path) -> Result<()> {
    let samples = synth_generate(&cfg.synth)?;
    let mut split = Vec::with_capacity(samples.len());
    for s in &samples {
        let name = format!("{}.png", s.id);
        write_rgb(&out.join("rgb").join(&name), &s.rgb)?;
        write_gray(&out.join("depth").join(&name), &s.depth)?;
        write_gray(&out.join("pseudo").join(&name), &s.pseudo)?;
        write_gray(&out.join("gt").join(&name), &s.gt)?;
        let tag = match s.split {
            Split::Train => SplitTag::Train,
            Split::Eval => SplitTag::Eval,
        };
        split.push(vec![s.id.clone(), tag.name().to_string()]);
    }
    write_csv(&out.join("split.csv"), &["id", "split"], &split)?;
    write_config(out, cfg)?;
    log::info!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

/// Pseudo-label MAE against ground truth at source resolution.
struct GtProbe {
    gts: Vec<(String, ScalarField)>,
}

impl GtProbe {
    /// `None` unless every entry has ground truth.
    fn new(gt: &GroundTruth<'_>, entries: &[&Entry]) -> Result<Option<Self>> {
        if !gt.is_complete(entries.iter().copied()) {
            return Ok(None);
        }
        let gts = entries
            .iter()
            .map(|e| Ok((e.id.clone(), gt.load(&e.id)?)))
            .collect::<Result<_>>()?;
        Ok(Some(Self { gts }))
    }

    fn score(&self, id: &str, label: &ScalarField) -> dsu_core::Result<f64> {
        let g = &self
            .gts
            .iter()
            .find(|(i, _)| i == id)
            .ok_or_else(|| dsu_core::Error::InvalidParameter(format!("{id}: unknown sample")))?
            .1;
        let (w, h) = g.dims();
        if label.dims() == (w, h) {
            metrics::mae(label, g)
        } else {
            metrics::mae(&resize_bilinear(label, w, h)?, g)
        }
    }
}

impl LabelProbe for GtProbe {
    fn mae(&self, id: &str, label: &ScalarField) -> dsu_core::Result<f64> {
        self.score(id, label)
    }
}

/// Path of `p` relative to `out`, so reports do not depend on where the
/// run directory lives.
fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Writes `labels/r{round}/{id}.png` at each source size and the matching
/// `labels/r{round}.csv`.
fn export_labels(
    out: &Path,
    round: usize,
    labels: &[(String, ScalarField)],
    dims: &[(usize, usize)],
    probe: Option<&GtProbe>,
) -> Result<()> {
    let dir = out.join("labels").join(format!("r{round}"));
    let mut rows = Vec::with_capacity(labels.len());
    for ((id, label), &(w, h)) in labels.iter().zip(dims) {
        let label = if label.dims() == (w, h) {
            label.clone()
        } else {
            resize_bilinear(label, w, h)?
        };
        let path = dir.join(format!("{id}.png"));
        write_gray(&path, &label)?;
        let mae = probe.map(|p| p.score(id, &label)).transpose()?;
        rows.push(vec![
            id.clone(),
            round.to_string(),
            rel(out, &path),
            opt(mae),
        ]);
    }
    write_csv(
        &out.join("labels").join(format!("r{round}.csv")),
        &LABELS_HEADER,
        &rows,
    )
}

fn train_entries(manifest: &DatasetManifest) -> Result<Vec<&Entry>> {
    let entries = manifest.split(SplitTag::Train);
    if entries.is_empty() {
        return Err(CliError::Data("no training samples".into()));
    }
    Ok(entries)
}

/// Initial pseudo-labels for the training split: supplied `pseudo/` maps,
/// or the depth prior where none is supplied, optionally CRF-filtered.
pub fn init_labels(cfg: &Config, data: &Path, out: &Path) -> Result<()> {
    let manifest = ingest(data)?;
    let entries = train_entries(&manifest)?;
    let mut labels = Vec::with_capacity(entries.len());
    let mut dims = Vec::with_capacity(entries.len());
    for e in &entries {
        let rgb = read_rgb(&e.rgb, Purpose::Train)?;
        let mut label = match &e.pseudo {
            Some(p) => read_gray(p, Purpose::Train)?,
            None => {
                let d = read_gray(&e.depth, Purpose::Train)?;
                simple_depth_prior_init(&if cfg.depth_invert { d.complement() } else { d })
            }
        };
        if label.dims() != rgb.dims() {
            return Err(CliError::Data(format!(
                "{}: pseudo-label is {:?} but rgb is {:?}",
                e.id,
                label.dims(),
                rgb.dims()
            )));
        }
        if cfg.init_crf {
            label = refine(&rgb, &label, &cfg.train.label)?;
        }
        dims.push(rgb.dims());
        labels.push((e.id.clone(), label));
    }
    let probe = GtProbe::new(&manifest.ground_truth(), &entries)?;
    export_labels(out, 0, &labels, &dims, probe.as_ref())?;
    write_config(out, cfg)
}

fn load_samples(
    entries: &[&Entry],
    cfg: &Config,
) -> Result<(Vec<TrainSample>, Vec<(usize, usize)>)> {
    entries
        .iter()
        .map(|e| load_sample(e, cfg))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn load_store(dir: &Path, samples: &[TrainSample], size: usize) -> Result<PseudoLabelStore> {
    let labels = samples
        .iter()
        .map(|s| Ok((s.id.clone(), load_label(dir, &s.id, size)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoLabelStore::new(labels)?)
}

fn epoch_rows(r: &RoundReport) -> Vec<Vec<String>> {
    r.epochs
        .iter()
        .map(|e| {
            let mut row = vec![
                e.round.to_string(),
                e.epoch.to_string(),
                e.step.index().to_string(),
                e.l_sal.to_string(),
            ];
            match &e.depth {
                Some(d) => row.extend(
                    [d.l_d1, d.l_d2, d.l_sal, d.l_nonsal, d.l_con, d.total()]
                        .map(|v| v.to_string()),
                ),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            row
        })
        .collect()
}

fn store_entries(store: &PseudoLabelStore) -> Vec<(String, ScalarField)> {
    store
        .ids()
        .iter()
        .cloned()
        .zip(store.labels().iter().cloned())
        .collect()
}

/// Trains for `rounds` rounds from the labels in `labels` (default
/// `<out>/labels/r0`), writing a checkpoint and the labels after every round.
pub fn train(cfg: &Config, data: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let manifest = ingest(data)?;
    let entries = train_entries(&manifest)?;
    let (samples, dims) = load_samples(&entries, cfg)?;
    let label_dir = labels.map_or_else(|| out.join("labels").join("r0"), Path::to_path_buf);
    let mut store = load_store(&label_dir, &samples, cfg.input_size)?;
    let probe = GtProbe::new(&manifest.ground_truth(), &entries)?;
    let probe_ref = probe.as_ref().map(|p| p as &dyn LabelProbe);

    let mut trainer = Trainer::new(cfg.train.clone())?;
    write_config(out, cfg)?;
    let ckpt_dir = out.join("checkpoints");
    let mut epochs = Vec::new();
    let mut rounds = Vec::new();
    let mut before = probe_ref
        .map(|p| dsu_core::trainer::probe_store(p, &store))
        .transpose()?;
    for _ in 0..cfg.train.rounds {
        let report = trainer.train_round(&samples, &mut store, probe_ref)?;
        let r = report.round;
        log::info!(
            "round {r}: l_sal {:.4}, label mae {}",
            report.epochs.last().map_or(f32::NAN, |e| e.l_sal),
            opt(report.label_mae)
        );
        epochs.extend(epoch_rows(&report));
        rounds.push(vec![
            r.to_string(),
            report.updated.to_string(),
            opt(before),
            opt(report.label_mae),
        ]);
        before = report.label_mae;
        write_atomic(
            &ckpt_dir.join(format!("round_{r}.ckpt")),
            &trainer.checkpoint(),
        )?;
        if report.updated {
            export_labels(out, r, &store_entries(&store), &dims, probe.as_ref())?;
        }
    }
    write_atomic(&ckpt_dir.join("final.ckpt"), &trainer.checkpoint())?;
    write_csv(&out.join("epochs.csv"), &EPOCHS_HEADER, &epochs)?;
    write_csv(&out.join("rounds.csv"), &ROUNDS_HEADER, &rounds)
}

fn load_trainer(cfg: &Config, checkpoint: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(checkpoint).map_err(|e| {
        CliError::Data(format!(
            "cannot read checkpoint {}: {e}",
            checkpoint.display()
        ))
    })?;
    let mut trainer = Trainer::new(cfg.train.clone())?;
    trainer.load_checkpoint(&bytes)?;
    Ok(trainer)
}

/// Round number encoded in a `r{k}` directory name.
fn label_round(dir: &Path) -> usize {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix('r'))
        .and_then(|k| k.parse().ok())
        .unwrap_or(0)
}

/// One label update from a checkpoint. Labels from `.../r{k}` are written to
/// `<out>/labels/r{k+1}`.
pub fn update_labels(
    cfg: &Config,
    data: &Path,
    checkpoint: &Path,
    labels: &Path,
    out: &Path,
) -> Result<()> {
    let mut trainer = load_trainer(cfg, checkpoint)?;
    let manifest = ingest(data)?;
    let entries = train_entries(&manifest)?;
    let (samples, dims) = load_samples(&entries, cfg)?;
    let mut store = load_store(labels, &samples, cfg.input_size)?;
    let (records, _) = trainer
        .propose_labels(&samples, &store)?
        .ok_or_else(|| CliError::Usage("update = none leaves labels unchanged".into()))?;
    store.commit(records)?;
    let probe = GtProbe::new(&manifest.ground_truth(), &entries)?;
    export_labels(
        out,
        label_round(labels) + 1,
        &store_entries(&store),
        &dims,
        probe.as_ref(),
    )?;
    write_config(out, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Eval,
    All,
}

pub enum Predictions<'a> {
    Checkpoint(&'a Path),
    Directory(&'a Path),
}

fn find_image(dir: &Path, id: &str) -> Result<PathBuf> {
    crate::image_io::IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| CliError::Data(format!("{id}: no prediction in {}", dir.display())))
}

/// Metrics of predictions against ground truth, written to `metrics.csv`
/// (one row per sample and a final `mean` row) and `f_curve.csv` (the mean
/// F-measure at every threshold). Returns the mean report.
pub fn eval(
    cfg: &Config,
    data: &Path,
    preds: Predictions<'_>,
    split: EvalSplit,
    out: &Path,
) -> Result<MetricsReport> {
    let manifest = ingest(data)?;
    let entries: Vec<&Entry> = match split {
        EvalSplit::Train => manifest.split(SplitTag::Train),
        EvalSplit::Eval => manifest.split(SplitTag::Eval),
        EvalSplit::All => manifest.entries().iter().collect(),
    };
    if entries.is_empty() {
        return Err(CliError::Data("nothing to evaluate".into()));
    }
    let gt = manifest.ground_truth();
    if let Some(e) = entries.iter().find(|e| !gt.has(&e.id)) {
        return Err(CliError::Data(format!("{}: no ground truth", e.id)));
    }
    let maps: Vec<ScalarField> = match preds {
        Predictions::Checkpoint(ckpt) => {
            let mut trainer = load_trainer(cfg, ckpt)?;
            let (samples, dims) = load_samples(&entries, cfg)?;
            let images: Vec<&RgbImage> = samples.iter().map(|s| &s.rgb).collect();
            let mut maps = Vec::with_capacity(samples.len());
            for ((s, p), (w, h)) in samples.iter().zip(trainer.predict(&images)?).zip(dims) {
                let p = resize_bilinear(&p, w, h)?;
                write_gray(&out.join("pred").join(format!("{}.png", s.id)), &p)?;
                maps.push(p);
            }
            maps
        }
        Predictions::Directory(dir) => entries
            .iter()
            .map(|e| read_gray(&find_image(dir, &e.id)?, Purpose::Eval))
            .collect::<Result<_>>()?,
    };
    let mut reports = Vec::with_capacity(entries.len());
    let mut rows = Vec::with_capacity(entries.len() + 1);
    let row = |id: &str, r: &MetricsReport| {
        vec![
            id.to_string(),
            r.mae.to_string(),
            r.f_max.to_string(),
            r.f_mean.to_string(),
            r.f_weighted.to_string(),
            r.e_measure.to_string(),
        ]
    };
    for (e, s) in entries.iter().zip(&maps) {
        let g = gt.load(&e.id)?;
        let s = if s.dims() == g.dims() {
            s.clone()
        } else {
            resize_bilinear(s, g.width(), g.height())?
        };
        let r = evaluate(&s, &g)?;
        rows.push(row(&e.id, &r));
        reports.push(r);
    }
    let mean = MetricsReport::mean(&reports)?;
    rows.push(row("mean", &mean));
    write_csv(&out.join("metrics.csv"), &METRICS_HEADER, &rows)?;
    let curve: Vec<Vec<String>> = (0..THRESHOLDS)
        .map(|k| {
            vec![
                k.to_string(),
                metrics::threshold(k).to_string(),
                mean.f_curve[k].to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("f_curve.csv"), &CURVE_HEADER, &curve)?;
    Ok(mean)
}
