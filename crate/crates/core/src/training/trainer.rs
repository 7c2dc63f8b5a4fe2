use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::losses::{total_loss, warmup_schedule, LossBreakdown};
use crate::alignment::{sinkhorn_em_update, ClassGmms, EmOptions};
use crate::config::RunConfig;
use crate::dataio::{Dataset, SampleRecord};
use crate::encoders::EncodedInputs;
use crate::error::{Error, Result};
use crate::evaluation::Scores;
use crate::fusion::Routing;
use crate::graph::{softmax_rows, Graph};
use crate::model::{Model, PassOptions};
use crate::nn::{clip_global_norm, stream, Adam, AdamConfig, Rng64};

const ADAM_EPS: f64 = 1e-8;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub losses: LossBreakdown,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub gmms: Option<ClassGmms>,
    pub log: Vec<EpochRecord>,
    pub rng: Rng64,
    /// Final eval-mode class probabilities on the held-out records.
    pub holdout_probs: Array2<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> super::Checkpoint {
        super::Checkpoint::capture(&self.model, self.gmms.as_ref(), &self.rng, self.model.config.train.epochs)
    }

    pub fn log_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn mcl_inputs(model: &Model, inputs: &[EncodedInputs]) -> Array2<f64> {
    let mut x = model.embed(inputs);
    if model.config.align.mcl_normalize {
        for mut row in x.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
    }
    x
}

fn em_options(config: &RunConfig) -> EmOptions {
    EmOptions {
        momentum: config.align.momentum,
        sinkhorn_reg: Some(config.align.sinkhorn_reg),
        sinkhorn_iters: config.align.sinkhorn_iters,
    }
}

/// Eval-mode loss breakdown and probabilities over `inputs`.
pub fn evaluate(
    model: &Model,
    inputs: &[EncodedInputs],
    labels: &[usize],
    epoch: usize,
    gmms: Option<&ClassGmms>,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let chunk = model.config.train.batch_size.max(1);
    let mut probs = Array2::zeros((inputs.len(), model.meta.n_classes));
    let mut mean = LossBreakdown::default();
    for (ci, (part, lab)) in inputs.chunks(chunk).zip(labels.chunks(chunk)).enumerate() {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, false);
        let refs: Vec<&EncodedInputs> = part.iter().collect();
        let mut routing = Routing::new();
        let fwd = model.forward(&mut g, &p, &refs, &mut routing, PassOptions::default());
        let nodes = total_loss(&mut g, &fwd, lab, &model.config, epoch, gmms, &mut routing)?;
        mean.add_scaled(&nodes.breakdown(&g), part.len() as f64 / inputs.len() as f64);
        probs
            .slice_mut(ndarray::s![ci * chunk..ci * chunk + part.len(), ..])
            .assign(&softmax_rows(g.value(fwd.logits_agg)));
    }
    Ok((mean, probs))
}

fn record(epoch: usize, split: &str, losses: LossBreakdown, probs: &Array2<f64>, labels: &[usize]) -> EpochRecord {
    let s = Scores::of(probs.view(), labels);
    EpochRecord {
        epoch,
        split: split.to_string(),
        losses,
        auc: s.auc,
        f1: s.f1,
        acc: s.acc,
    }
}

/// Mini-batch training on `train`, with per-epoch metrics on `holdout`.
///
/// Parameters are rounded to checkpoint precision once training ends, so the
/// returned model and a reloaded checkpoint agree exactly.
pub fn train(
    train: &[SampleRecord],
    holdout: &[SampleRecord],
    n_classes: usize,
    dim: usize,
    config: &RunConfig,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = Model::for_training(config.clone(), n_classes, dim, train)?;
    let train_in = model.prepare_all(train)?;
    let hold_in = model.prepare_all(holdout)?;
    let train_labels: Vec<usize> = train.iter().map(|r| r.label).collect();
    let hold_labels: Vec<usize> = holdout.iter().map(|r| r.label).collect();
    super::losses::check_labels(&train_labels, n_classes)?;
    super::losses::check_labels(&hold_labels, n_classes)?;

    let t = &config.train;
    let mut adam = Adam::new(
        AdamConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: ADAM_EPS,
            weight_decay: t.weight_decay,
        },
        &model.store,
    );
    let mut rng = stream(t.seed, "train");
    let mut dropout = Rng64::seed_from_u64(rng.random());
    let mut gmms: Option<ClassGmms> = None;
    let mut log = Vec::with_capacity(2 * t.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let em = em_options(config);

    for epoch in 0..t.epochs {
        let active = warmup_schedule(epoch, config);
        if active.mcl && gmms.is_none() {
            let feats = mcl_inputs(&model, &train_in);
            gmms = Some(ClassGmms::init_kmeans(
                feats.view(),
                &train_labels,
                n_classes,
                config.align.m_comp,
                t.seed,
            )?);
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        let mut train_probs = Array2::zeros((train.len(), n_classes));
        let mut seen_labels = Vec::with_capacity(train.len());
        for (bi, batch) in order.chunks(t.batch_size.max(1)).enumerate() {
            let refs: Vec<&EncodedInputs> = batch.iter().map(|&i| &train_in[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, true);
            let mut routing = Routing::new();
            let fwd = model.forward(
                &mut g,
                &p,
                &refs,
                &mut routing,
                PassOptions {
                    dropout: Some(&mut dropout),
                    inputs_as_leaves: false,
                },
            );
            let nodes = total_loss(&mut g, &fwd, &labels, config, epoch, gmms.as_ref(), &mut routing)?;
            let breakdown = nodes.breakdown(&g);
            if !breakdown.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    breakdown: serde_json::to_string(&breakdown)?,
                });
            }
            let grads = g.backward(nodes.total);
            let mut flat = p.collect(&grads, &model.store);
            if flat.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numerical {
                    iteration: bi,
                    reason: format!("non-finite parameter gradient at epoch {epoch}"),
                });
            }
            clip_global_norm(&mut flat, t.grad_clip);
            adam.update(&mut model.store, &flat);
            if active.mcl {
                if let Some(gm) = gmms.as_mut() {
                    sinkhorn_em_update(g.value(nodes.mcl_features).view(), &labels, gm, em)?;
                }
            }
            let start = seen_labels.len();
            train_probs
                .slice_mut(ndarray::s![start..start + batch.len(), ..])
                .assign(&softmax_rows(g.value(fwd.logits_agg)));
            seen_labels.extend_from_slice(&labels);
            epoch_loss.add_scaled(&breakdown, batch.len() as f64 / train.len() as f64);
        }
        let rec = record(epoch, "train", epoch_loss, &train_probs, &seen_labels);
        if let Some(f) = on_epoch.as_deref_mut() {
            f(&rec);
        }
        log.push(rec);
        if !holdout.is_empty() {
            let (losses, probs) = evaluate(&model, &hold_in, &hold_labels, epoch, gmms.as_ref())?;
            let rec = record(epoch, "holdout", losses, &probs, &hold_labels);
            if let Some(f) = on_epoch.as_deref_mut() {
                f(&rec);
            }
            log.push(rec);
        }
    }
    model.store.round_to_f32();
    let holdout_probs = if holdout.is_empty() {
        Array2::zeros((0, n_classes))
    } else {
        model.predict(&hold_in)
    };
    Ok(TrainOutcome {
        model,
        gmms,
        log,
        rng,
        holdout_probs,
    })
}

/// Trains on every fold except `config.train.holdout_fold`, which is held out.
pub fn train_dataset(dataset: &Dataset, config: &RunConfig) -> Result<TrainOutcome> {
    let folds = dataset.fold_of()?;
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let h = config.train.holdout_fold;
    let (train_idx, hold_idx): (Vec<usize>, Vec<usize>) = if k < 2 {
        ((0..folds.len()).collect(), Vec::new())
    } else {
        if h >= k {
            return Err(Error::config("train.holdout_fold", format!("fold {h} does not exist ({k} folds)")));
        }
        (0..folds.len()).partition(|&i| folds[i] != h)
    };
    let m = &dataset.manifest;
    train(
        &dataset.subset(&train_idx),
        &dataset.subset(&hold_idx),
        m.n_classes,
        m.dim,
        config,
        None,
    )
}

/// Mean per-row cross-entropy of `probs` against `labels`.
pub fn log_loss(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    probs
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(r, &l)| -r[l].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len().max(1) as f64
}
