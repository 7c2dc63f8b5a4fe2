use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricReport, Scores, Summary};
use crate::config::{RunConfig, Scenario};
use crate::dataio::{apply_mask, drop_incomplete, stratified_folds, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::stream;
use crate::training::train;

/// Fraction of each modality masked in the incomplete-data ablation.
pub const ABLATION_MISSING_FRACTION: f64 = 0.3;

/// Fold index per record. The dataset's own assignment is used when it has
/// exactly `k_folds` folds; otherwise records are re-stratified.
pub fn fold_assignment(dataset: &Dataset, k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if let Ok(folds) = dataset.fold_of() {
        let k = folds.iter().copied().max().map_or(0, |m| m + 1);
        let all_used = (0..k).all(|f| folds.contains(&f));
        if k == k_folds && all_used {
            return Ok(folds);
        }
    }
    stratified_folds(&dataset.labels(), k_folds, seed)
}

/// Seed of the `r`-th repetition.
pub fn repetition_seed(config: &RunConfig, r: usize) -> u64 {
    config.train.seed.wrapping_add(r as u64)
}

/// Train/test records for one `(seed, fold)` split, or `None` when the split
/// has no usable training data.
pub type SplitFn<'a> =
    dyn Fn(u64, usize, Vec<SampleRecord>, Vec<SampleRecord>) -> Result<Option<(Vec<SampleRecord>, Vec<SampleRecord>)>>
        + Sync
        + 'a;

/// Trains one model per `(seed, fold)` and scores it on the held-out fold.
/// Returns `None` as soon as any split is unusable.
pub fn cross_validate(dataset: &Dataset, config: &RunConfig, split: &SplitFn<'_>) -> Result<Option<MetricReport>> {
    config.validate()?;
    let k = config.eval.k_folds;
    let folds = fold_assignment(dataset, k, config.train.seed)?;
    let jobs: Vec<(usize, usize)> = (0..config.eval.seeds.max(1))
        .flat_map(|r| (0..k).map(move |f| (r, f)))
        .collect();
    let m = &dataset.manifest;
    let results: Vec<Result<Option<Scores>>> = jobs
        .par_iter()
        .map(|&(r, fold)| {
            let seed = repetition_seed(config, r);
            let wrap = |e: Error| Error::Fold {
                fold,
                source: Box::new(e),
            };
            let (tr, te): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] != fold);
            let Some((tr, te)) = split(seed, fold, dataset.subset(&tr), dataset.subset(&te)).map_err(wrap)? else {
                return Ok(None);
            };
            let mut cfg = config.clone();
            cfg.train.seed = seed;
            let out = train(&tr, &te, m.n_classes, m.dim, &cfg, None).map_err(wrap)?;
            let labels: Vec<usize> = te.iter().map(|r| r.label).collect();
            Ok(Some(Scores::of(out.holdout_probs.view(), &labels)))
        })
        .collect();
    let mut scores = Vec::with_capacity(results.len());
    for (res, &(_, fold)) in results.into_iter().zip(&jobs) {
        match res? {
            Some(s) => scores.push((fold, s)),
            None => return Ok(None),
        }
    }
    let pick = |name: &str, f: fn(&Scores) -> Option<f64>| -> Result<Summary> {
        let vals = scores
            .iter()
            .map(|(fold, s)| {
                f(s).ok_or_else(|| Error::Fold {
                    fold: *fold,
                    source: Box::new(Error::UndefinedMetric(format!("{name} on the held-out fold"))),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Summary::of(vals))
    };
    Ok(Some(MetricReport {
        auc: pick("auc", |s| s.auc)?,
        f1: pick("f1", |s| s.f1)?,
        acc: pick("acc", |s| s.acc)?,
        scenario: None,
        config_hash: config.hash(),
    }))
}

/// Stratified k-fold cross-validation, repeated over `eval.seeds` seeds.
/// Per-fold values are listed seed-major.
pub fn run_cv(dataset: &Dataset, config: &RunConfig) -> Result<MetricReport> {
    let report = cross_validate(dataset, config, &|_, _, tr, te| Ok(Some((tr, te))))?;
    report.ok_or_else(|| Error::State("cross-validation produced no splits".into()))
}

fn mask_seed(seed: u64, fold: usize, part: &str) -> u64 {
    stream(seed, &format!("mask/{fold}/{part}")).random()
}

/// Applies `scenario` at `fraction` to one split.
pub fn scenario_split(
    config: &RunConfig,
    scenario: Scenario,
    fraction: f64,
    seed: u64,
    fold: usize,
    train: Vec<SampleRecord>,
    test: Vec<SampleRecord>,
) -> Result<Option<(Vec<SampleRecord>, Vec<SampleRecord>)>> {
    let strategy = config.mask.strategy;
    let masked_train = apply_mask(&train, fraction, mask_seed(seed, fold, "train"), strategy)?;
    let (train, test) = match scenario {
        Scenario::MaskedTrainMaskedTest => {
            let masked_test = apply_mask(&test, fraction, mask_seed(seed, fold, "test"), strategy)?;
            (masked_train, masked_test)
        }
        Scenario::MaskedTrainUnmaskedTest => (masked_train, test),
        Scenario::RemovedTrainUnmaskedTest => (drop_incomplete(&masked_train), test),
    };
    Ok((!train.is_empty()).then_some((train, test)))
}

/// Cross-validated metrics under one masking scenario; `None` when some
/// split is left without training data.
pub fn run_scenario(dataset: &Dataset, config: &RunConfig, scenario: Scenario, fraction: f64) -> Result<Option<MetricReport>> {
    let split = |seed, fold, tr, te| scenario_split(config, scenario, fraction, seed, fold, tr, te);
    let mut report = cross_validate(dataset, config, &split)?;
    if let Some(r) = report.as_mut() {
        r.scenario = Some(format!("{}@{fraction}", scenario.as_str()));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub fraction: f64,
    /// `None` reports "not applicable".
    pub report: Option<MetricReport>,
}

/// Every scenario at every fraction, fraction-major.
pub fn run_scenarios(dataset: &Dataset, config: &RunConfig, fractions: &[f64]) -> Result<Vec<ScenarioRow>> {
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config("fractions", format!("{f} is outside [0, 1]")));
        }
    }
    let mut rows = Vec::with_capacity(3 * fractions.len());
    for &fraction in fractions {
        for scenario in Scenario::ALL {
            rows.push(ScenarioRow {
                scenario,
                fraction,
                report: run_scenario(dataset, config, scenario, fraction)?,
            });
        }
    }
    Ok(rows)
}

/// Components switched on in one ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub cma: bool,
    pub recon: bool,
    pub moe: bool,
    pub align: bool,
}

impl Components {
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.fusion.use_cma = self.cma;
        c.fusion.use_moe = self.moe;
        c.recon.enabled = self.recon;
        c.align.enabled = self.align;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub components: Components,
    pub config_hash: String,
    pub report: MetricReport,
    /// Mean AUC minus the first row's mean AUC.
    pub delta_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTables {
    pub complete: Vec<AblationRow>,
    pub incomplete: Vec<AblationRow>,
    pub missing_fraction: f64,
}

/// Rows of the complete-data ablation: baseline, fusion, fusion plus
/// alignment. Reconstruction is off since nothing is missing.
pub fn complete_ladder() -> Vec<Components> {
    let row = |cma, moe, align| Components {
        cma,
        recon: false,
        moe,
        align,
    };
    vec![row(false, false, false), row(true, true, false), row(true, true, true)]
}

/// Rows of the incomplete-data ablation, each adding one component.
pub fn incomplete_ladder() -> Vec<Components> {
    let row = |recon, moe, align| Components {
        cma: true,
        recon,
        moe,
        align,
    };
    vec![
        row(false, false, false),
        row(true, false, false),
        row(true, true, false),
        row(true, true, true),
    ]
}

fn ladder(
    dataset: &Dataset,
    base: &RunConfig,
    rows: Vec<Components>,
    run: impl Fn(&Dataset, &RunConfig) -> Result<MetricReport>,
) -> Result<Vec<AblationRow>> {
    let mut out: Vec<AblationRow> = Vec::with_capacity(rows.len());
    for components in rows {
        let cfg = components.apply(base);
        let report = run(dataset, &cfg)?;
        let delta_auc = out.first().map_or(0.0, |first| report.auc.mean - first.report.auc.mean);
        out.push(AblationRow {
            components,
            config_hash: cfg.hash(),
            report,
            delta_auc,
        });
    }
    Ok(out)
}

/// Complete-data and incomplete-data component ladders.
pub fn run_ablation(dataset: &Dataset, config: &RunConfig) -> Result<AblationTables> {
    let complete = ladder(dataset, config, complete_ladder(), run_cv)?;
    let fraction = ABLATION_MISSING_FRACTION;
    let incomplete = ladder(dataset, config, incomplete_ladder(), |ds, cfg| {
        run_scenario(ds, cfg, Scenario::MaskedTrainMaskedTest, fraction)?
            .ok_or_else(|| Error::State("masked training left no data".into()))
    })?;
    Ok(AblationTables {
        complete,
        incomplete,
        missing_fraction: fraction,
    })
}
