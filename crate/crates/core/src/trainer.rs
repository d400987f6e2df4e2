//! Round-based training: saliency and depth networks optimized together
//! against the current pseudo-labels, with a label update at every round end.
//!
//! The trainer only ever sees [`TrainSample`]s (image, depth, id). Ground
//! truth can influence nothing but the optional [`LabelProbe`], which turns a
//! label into a single number for reporting.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::ats::{attentive_bce_with_grad, RoundSchedule, Step};
use crate::disentangle::{
    DepthBatch, DepthLossBreakdown, DepthSide, GaussianKernel, MaskSource, ObjectiveConfig,
};
use crate::error::{Error, Result};
use crate::field::{minmax_normalize, RgbImage, ScalarField};
use crate::label_update::{dlu_label, predict_components, refine, UpdateConfig, UpdateRecord};
use crate::nn::checkpoint;
use crate::nn::net::{build_saliency_net, named_tensors, SaliencyNet, DEFAULT_CHANNELS};
use crate::nn::tensor::{stack_fields, stack_rgb, unstack_channel};
use crate::nn::{Adam, BnMode, Module};
use crate::rng::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Step one then step two in every round.
    Ats,
    /// Step-one weights throughout.
    Uniform,
    /// Step-two weights throughout.
    Attentive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Depth-disentangled update followed by the CRF.
    Dsu,
    /// CRF on the normalized saliency prediction alone.
    CrfOnly,
    /// Labels never change; the depth side is not trained.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: usize,
    pub rounds: usize,
    pub batch: usize,
    /// Adam step size. 1e-4 suits long full-resolution runs; the desk-scale
    /// default of 3e-3 lets the small networks fit within a few rounds.
    pub lr: f32,
    pub seed: u64,
    pub channels: usize,
    pub weighting: Weighting,
    pub update: UpdateMode,
    /// Random horizontal flips of whole samples.
    pub flip: bool,
    pub kernel: GaussianKernel,
    pub objective: ObjectiveConfig,
    pub label: UpdateConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 3,
            rounds: 4,
            batch: 4,
            lr: 3e-3,
            seed: 42,
            channels: DEFAULT_CHANNELS,
            weighting: Weighting::Ats,
            update: UpdateMode::Dsu,
            flip: true,
            kernel: GaussianKernel {
                size: 6,
                sigma: 0.75,
            },
            objective: ObjectiveConfig::default(),
            label: UpdateConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(String::from(m)));
        if self.tau == 0 {
            return bad("tau must be positive");
        }
        if self.batch < 2 {
            return bad("batch must hold at least two samples");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.channels == 0 {
            return bad("channels must be positive");
        }
        if !(self.objective.lambda >= 0.0 && self.objective.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        self.kernel.validate()?;
        self.label.crf.validate()
    }
}

/// What the trainer may see of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub rgb: RgbImage,
    pub depth: ScalarField,
}

/// Current pseudo-label of every training sample and the round that
/// produced it (0 for the initial label).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelStore {
    ids: Vec<String>,
    labels: Vec<ScalarField>,
    rounds: Vec<u32>,
}

impl PseudoLabelStore {
    pub fn new(entries: Vec<(String, ScalarField)>) -> Result<Self> {
        for (id, l) in &entries {
            l.check_unit(&format!("pseudo-label {id}"))?;
        }
        let (ids, labels): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let rounds = alloc::vec![0; ids.len()];
        Ok(Self {
            ids,
            labels,
            rounds,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn label(&self, i: usize) -> &ScalarField {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[ScalarField] {
        &self.labels
    }

    pub fn round(&self, i: usize) -> u32 {
        self.rounds[i]
    }

    /// Applies a full set of updates at once. Every record must name the
    /// sample at its position and advance that sample's round by exactly one.
    pub fn commit(&mut self, records: Vec<UpdateRecord>) -> Result<()> {
        if records.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "{} updates for {} labels",
                records.len(),
                self.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.id != self.ids[i] || r.round != self.rounds[i] + 1 {
                return Err(Error::InvalidParameter(format!(
                    "update {} round {} does not follow {} round {}",
                    r.id, r.round, self.ids[i], self.rounds[i]
                )));
            }
            r.post.check_unit(&format!("updated label {}", r.id))?;
        }
        for (i, r) in records.into_iter().enumerate() {
            self.labels[i] = r.post;
            self.rounds[i] = r.round;
        }
        Ok(())
    }
}

/// Scores a pseudo-label without revealing what it is compared against.
pub trait LabelProbe {
    fn mae(&self, id: &str, label: &ScalarField) -> Result<f64>;
}

/// Mean of the probe over the whole store.
pub fn probe_store(probe: &dyn LabelProbe, store: &PseudoLabelStore) -> Result<f64> {
    let mut total = 0.0;
    for (id, l) in store.ids.iter().zip(&store.labels) {
        total += probe.mae(id, l)?;
    }
    Ok(total / store.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub round: usize,
    pub epoch: usize,
    pub step: Step,
    /// Batch mean of the (weighted) saliency loss.
    pub l_sal: f32,
    /// Batch means of the depth loss; absent when the depth side is idle.
    pub depth: Option<DepthLossBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub epochs: Vec<EpochReport>,
    /// Whether labels were rewritten at the end of the round.
    pub updated: bool,
    /// Pseudo-label MAE after the round, when a probe is supplied.
    pub label_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub initial_label_mae: Option<f64>,
    pub rounds: Vec<RoundReport>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub saliency: SaliencyNet,
    pub depth: DepthSide,
    opt_saliency: Adam,
    opt_depth: Adam,
    rounds_done: usize,
    /// Eval-mode saliency predictions from the last label update, used for
    /// the depth-side masks in the following round.
    mask_cache: Option<Vec<ScalarField>>,
    seeds: SeedTree,
}

fn mean_f32(v: &[f32]) -> f32 {
    (v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len().max(1) as f64) as f32
}

fn mean_breakdown(v: &[DepthLossBreakdown]) -> Option<DepthLossBreakdown> {
    let first = v.first()?;
    let m = |f: &dyn Fn(&DepthLossBreakdown) -> f32| mean_f32(&v.iter().map(f).collect::<Vec<_>>());
    Some(DepthLossBreakdown {
        l_d1: m(&|b| b.l_d1),
        l_d2: m(&|b| b.l_d2),
        l_sal: m(&|b| b.l_sal),
        l_nonsal: m(&|b| b.l_nonsal),
        l_con: m(&|b| b.l_con),
        lambda: first.lambda,
    })
}

/// Batches of at least two samples; a trailing singleton joins the batch
/// before it.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("two or more batches") = &order[start..];
    }
    out
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedTree::new(config.seed);
        let saliency = build_saliency_net(config.channels, &seeds.child("saliency"));
        let depth = DepthSide::new(config.channels, config.kernel, &seeds.child("depth"))?;
        Ok(Self {
            opt_saliency: Adam::new(config.lr),
            opt_depth: Adam::new(config.lr),
            config,
            saliency,
            depth,
            rounds_done: 0,
            mask_cache: None,
            seeds,
        })
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    fn trains_depth(&self) -> bool {
        self.config.update == UpdateMode::Dsu
    }

    /// Runs every configured round.
    pub fn train(
        &mut self,
        samples: &[TrainSample],
        store: &mut PseudoLabelStore,
        probe: Option<&dyn LabelProbe>,
    ) -> Result<TrainReport> {
        let mut report = TrainReport {
            initial_label_mae: probe.map(|p| probe_store(p, store)).transpose()?,
            rounds: Vec::new(),
        };
        for _ in 0..self.config.rounds {
            report.rounds.push(self.train_round(samples, store, probe)?);
        }
        Ok(report)
    }

    /// One round of `2τ` epochs (step one then step two under ATS), then
    /// the label update.
    pub fn train_round(
        &mut self,
        samples: &[TrainSample],
        store: &mut PseudoLabelStore,
        probe: Option<&dyn LabelProbe>,
    ) -> Result<RoundReport> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(
                "training needs at least two samples".into(),
            ));
        }
        if store.ids()
            != samples
                .iter()
                .map(|s| s.id.clone())
                .collect::<Vec<_>>()
                .as_slice()
        {
            return Err(Error::InvalidParameter(
                "label store and samples disagree on ids".into(),
            ));
        }
        let round = self.rounds_done + 1;
        let schedule = RoundSchedule::new(self.config.tau, round)?;
        let mut epochs = Vec::new();
        for slot in schedule.round_slots(round) {
            let step = match self.config.weighting {
                Weighting::Ats => slot.step,
                Weighting::Uniform => Step::One,
                Weighting::Attentive => Step::Two,
            };
            epochs.push(self.run_epoch(samples, store, round, slot.epoch, step)?);
        }
        let updated = self.update_labels(samples, store)?;
        self.rounds_done = round;
        Ok(RoundReport {
            round,
            epochs,
            updated,
            label_mae: probe.map(|p| probe_store(p, store)).transpose()?,
        })
    }

    fn run_epoch(
        &mut self,
        samples: &[TrainSample],
        store: &PseudoLabelStore,
        round: usize,
        epoch: usize,
        step: Step,
    ) -> Result<EpochReport> {
        let node = self.seeds.child("epoch").indexed(epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut node.stream("order"));
        let mut flip_rng = node.stream("flip");
        let flips: Vec<bool> = (0..samples.len())
            .map(|_| self.config.flip && flip_rng.random_bool(0.5))
            .collect();

        let mut sal_losses = Vec::new();
        let mut depth_losses = Vec::new();
        for (b, idx) in batches(&order, self.config.batch).into_iter().enumerate() {
            let at = || format!("round {round} epoch {epoch} batch {}", b + 1);
            let pick = |f: &dyn Fn(&TrainSample) -> ScalarField, i: usize| {
                let v = f(&samples[i]);
                if flips[i] {
                    v.flip_horizontal()
                } else {
                    v
                }
            };
            let rgb: Vec<RgbImage> = idx
                .iter()
                .map(|&i| {
                    if flips[i] {
                        samples[i].rgb.flip_horizontal()
                    } else {
                        samples[i].rgb.clone()
                    }
                })
                .collect();
            let labels: Vec<ScalarField> = idx
                .iter()
                .map(|&i| {
                    if flips[i] {
                        store.label(i).flip_horizontal()
                    } else {
                        store.label(i).clone()
                    }
                })
                .collect();
            let x = stack_rgb(&rgb.iter().collect::<Vec<_>>())?;
            let y = stack_fields(&labels.iter().collect::<Vec<_>>())?;

            let (pred, cache) = self.saliency.forward(&x, BnMode::Train)?;
            let (loss, grad) = attentive_bce_with_grad(&pred, &y, step)
                .map_err(|e| Error::NonFinite(format!("{} ({e})", at())))?;
            if !loss.value.is_finite() {
                return Err(Error::NonFinite(format!("saliency loss at {}", at())));
            }
            self.saliency.zero_grad();
            self.saliency.backward(&cache, &grad)?;
            self.opt_saliency.step(&mut self.saliency)?;
            sal_losses.push(loss.value);

            if self.trains_depth() {
                let depth: Vec<ScalarField> =
                    idx.iter().map(|&i| pick(&|s| s.depth.clone(), i)).collect();
                let masks: Vec<ScalarField> = match &self.mask_cache {
                    Some(cached) => idx
                        .iter()
                        .map(|&i| {
                            if flips[i] {
                                cached[i].flip_horizontal()
                            } else {
                                cached[i].clone()
                            }
                        })
                        .collect(),
                    None => unstack_channel(&pred, 0)?,
                };
                let batch = DepthBatch {
                    rgb: &x,
                    depth: &depth,
                    masks: MaskSource::Predicted(&masks),
                };
                self.depth.zero_grad();
                let l = self
                    .depth
                    .objective_and_grad(&batch, &self.config.objective)?;
                if !l.total().is_finite() {
                    return Err(Error::NonFinite(format!("depth loss at {}", at())));
                }
                self.opt_depth.step(&mut self.depth)?;
                depth_losses.push(l);
            }
        }
        Ok(EpochReport {
            round,
            epoch,
            step,
            l_sal: mean_f32(&sal_losses),
            depth: mean_breakdown(&depth_losses),
        })
    }

    /// Eval-mode saliency maps.
    pub fn predict(&mut self, images: &[&RgbImage]) -> Result<Vec<ScalarField>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch) {
            let (s, _) = self.saliency.forward(&stack_rgb(chunk)?, BnMode::Eval)?;
            out.extend(unstack_channel(&s, 0)?);
        }
        Ok(out)
    }

    /// New labels for every sample under the configured update mode, without
    /// committing them. Returns `None` when the mode leaves labels alone.
    pub fn propose_labels(
        &mut self,
        samples: &[TrainSample],
        store: &PseudoLabelStore,
    ) -> Result<Option<(Vec<UpdateRecord>, Vec<ScalarField>)>> {
        let cfg = self.config.label;
        let images: Vec<&RgbImage> = samples.iter().map(|s| &s.rgb).collect();
        let (posts, sal): (Vec<ScalarField>, Vec<ScalarField>) = match self.config.update {
            UpdateMode::None => return Ok(None),
            UpdateMode::CrfOnly => {
                let sal = self.predict(&images)?;
                let posts = images
                    .iter()
                    .zip(&sal)
                    .map(|(rgb, s)| refine(rgb, &minmax_normalize(s), &cfg))
                    .collect::<Result<_>>()?;
                (posts, sal)
            }
            UpdateMode::Dsu => {
                let mut comps = Vec::with_capacity(samples.len());
                for chunk in images.chunks(self.config.batch) {
                    comps.extend(predict_components(
                        &mut self.saliency,
                        &mut self.depth,
                        chunk,
                    )?);
                }
                let posts = images
                    .iter()
                    .zip(&comps)
                    .map(|(rgb, (s, ds, dn))| dlu_label(rgb, s, ds, dn, &cfg))
                    .collect::<Result<_>>()?;
                (posts, comps.into_iter().map(|c| c.0).collect())
            }
        };
        let records = posts
            .into_iter()
            .enumerate()
            .map(|(i, post)| UpdateRecord {
                id: store.ids()[i].clone(),
                round: store.round(i) + 1,
                pre: store.label(i).clone(),
                post,
            })
            .collect();
        Ok(Some((records, sal)))
    }

    fn update_labels(
        &mut self,
        samples: &[TrainSample],
        store: &mut PseudoLabelStore,
    ) -> Result<bool> {
        match self.propose_labels(samples, store)? {
            None => Ok(false),
            Some((records, sal)) => {
                store.commit(records)?;
                self.mask_cache = Some(sal);
                Ok(true)
            }
        }
    }

    /// Parameters and buffers of both networks.
    pub fn checkpoint(&mut self) -> Vec<u8> {
        let mut entries = named_tensors(&mut self.saliency, "saliency");
        entries.extend(named_tensors(&mut self.depth, "depth"));
        checkpoint::encode(&entries)
    }

    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let entries = checkpoint::decode(bytes)?;
        let (sal, depth): (Vec<_>, Vec<_>) = entries
            .into_iter()
            .partition(|(n, _)| n.starts_with("saliency."));
        checkpoint::load_into(&mut self.saliency, "saliency", &sal)?;
        checkpoint::load_into(&mut self.depth, "depth", &depth)
    }
}

/// Boxed probe from a closure.
pub fn probe_fn<F>(f: F) -> Box<dyn LabelProbe>
where
    F: Fn(&str, &ScalarField) -> Result<f64> + 'static,
{
    struct P<F>(F);
    impl<F: Fn(&str, &ScalarField) -> Result<f64>> LabelProbe for P<F> {
        fn mae(&self, id: &str, label: &ScalarField) -> Result<f64> {
            (self.0)(id, label)
        }
    }
    Box::new(P(f))
}
