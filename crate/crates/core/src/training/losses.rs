use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::alignment::{mcl_rows, symcl_total_rows, ClassGmms};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{read, ModalityBundle, Routing};
use crate::graph::{Graph, Var};
use crate::model::{ClassifierHeads, Forward};
use crate::nn::ParamStore;
use crate::reconstruction::reconstruction_loss_rows;

/// Loss terms switched on for an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveLosses {
    pub rec: bool,
    pub cls: bool,
    pub symcl: bool,
    pub mcl: bool,
}

/// Alignment terms start at epoch `warmup`; reconstruction and
/// classification are always on (reconstruction only when enabled).
pub fn warmup_schedule(epoch: usize, config: &RunConfig) -> ActiveLosses {
    let aligned = config.align.enabled && epoch >= config.train.warmup;
    ActiveLosses {
        rec: config.recon.enabled,
        cls: true,
        symcl: aligned,
        mcl: aligned,
    }
}

/// Component values of one loss evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub symcl: f64,
    pub mcl: f64,
    pub rec: f64,
    pub cls_global: f64,
    pub cls_local: f64,
    pub cls_agg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn cls(&self) -> f64 {
        self.cls_global + self.cls_local + self.cls_agg
    }

    pub fn is_finite(&self) -> bool {
        [self.symcl, self.mcl, self.rec, self.cls_global, self.cls_local, self.cls_agg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `self * w + other * (1 - w)`-style accumulation helper.
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.symcl += w * other.symcl;
        self.mcl += w * other.mcl;
        self.rec += w * other.rec;
        self.cls_global += w * other.cls_global;
        self.cls_local += w * other.cls_local;
        self.cls_agg += w * other.cls_agg;
        self.total += w * other.total;
    }
}

/// Graph nodes of the total loss and its components.
pub struct LossNodes {
    pub total: Var,
    pub symcl: Var,
    pub mcl: Var,
    pub rec: Var,
    pub cls: [Var; 3],
    /// Features the class mixtures are fitted on.
    pub mcl_features: Var,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            symcl: g.scalar(self.symcl),
            mcl: g.scalar(self.mcl),
            rec: g.scalar(self.rec),
            cls_global: g.scalar(self.cls[0]),
            cls_local: g.scalar(self.cls[1]),
            cls_agg: g.scalar(self.cls[2]),
            total: g.scalar(self.total),
        }
    }
}

pub fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(&label) => Err(Error::Label { label, n_classes }),
        None => Ok(()),
    }
}

/// Global, local and aggregate cross-entropies; the first two average over
/// the three modalities.
pub fn classification_losses_rows(g: &mut Graph, fwd: &Forward, labels: &[usize]) -> [Var; 3] {
    let mut level = |logits: [Var; 3]| {
        let a = g.cross_entropy(logits[0], labels);
        let b = g.cross_entropy(logits[1], labels);
        let c = g.cross_entropy(logits[2], labels);
        let s = g.add(a, b);
        let s = g.add(s, c);
        g.scale(s, 1.0 / 3.0)
    };
    let lg = level(fwd.logits_global);
    let ll = level(fwd.logits_local);
    let la = g.cross_entropy(fwd.logits_agg, labels);
    [lg, ll, la]
}

/// `(L_G, L_L, L_agg)` for one populated bundle.
pub fn classification_losses(
    bundle: &ModalityBundle,
    label: usize,
    heads: &ClassifierHeads,
    store: &ParamStore,
) -> Result<(f64, f64, f64)> {
    let n_classes = heads.agg.out_dim;
    check_labels(&[label], n_classes)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let row = |g: &mut Graph, v: &ndarray::Array1<f64>| g.constant(v.clone().insert_axis(Axis(0)));
    let fg = read(&bundle.final_global, "final_global")?;
    let fl = read(&bundle.final_local, "final_local")?;
    let out = read(&bundle.out, "out")?;
    let ce = |g: &mut Graph, head: &crate::nn::Linear, v: &ndarray::Array1<f64>| {
        let x = row(g, v);
        let l = head.forward(g, &p, x);
        let c = g.cross_entropy(l, &[label]);
        g.scalar(c)
    };
    let lg = (0..3).map(|m| ce(&mut g, heads.global_head(m), &fg[m])).sum::<f64>() / 3.0;
    let ll = (0..3).map(|m| ce(&mut g, heads.local_head(m), &fl[m])).sum::<f64>() / 3.0;
    let la = ce(&mut g, &heads.agg, out);
    Ok((lg, ll, la))
}

/// Features used by the prototype loss and the class mixtures.
pub fn mcl_features(g: &mut Graph, out: Var, normalize: bool) -> Var {
    if normalize {
        g.l2_normalize_rows(out)
    } else {
        out
    }
}

/// Weighted sum of the active loss terms for one forward pass.
pub fn total_loss(
    g: &mut Graph,
    fwd: &Forward,
    labels: &[usize],
    config: &RunConfig,
    epoch: usize,
    gmms: Option<&ClassGmms>,
    routing: &mut Routing,
) -> Result<LossNodes> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_classes = g.shape(fwd.logits_agg).1;
    check_labels(labels, n_classes)?;
    let active = warmup_schedule(epoch, config);
    let zero = |g: &mut Graph| g.constant(Array2::zeros((1, 1)));
    let a = &config.align;
    let symcl = if active.symcl {
        symcl_total_rows(
            g,
            &fwd.presence,
            [fwd.cma_global, fwd.cma_local],
            [fwd.agg_global, fwd.agg_local],
            a.symcl_tau,
            a.symcl_tau_mode,
        )
    } else {
        zero(g)
    };
    let mcl_feat = mcl_features(g, fwd.out, a.mcl_normalize);
    let mcl = if active.mcl {
        let gmms = gmms.ok_or_else(|| {
            Error::State("class mixtures are not initialized; alignment losses need the warm-up epochs to finish first".into())
        })?;
        mcl_rows(g, mcl_feat, labels, gmms, a.mcl_tau, routing)?
    } else {
        zero(g)
    };
    let rec = if active.rec {
        reconstruction_loss_rows(
            g,
            &fwd.presence,
            [fwd.cma_global, fwd.cma_local],
            [fwd.recon_global, fwd.recon_local],
            config.recon.rec_loss_on_masked,
        )
    } else {
        zero(g)
    };
    let cls = classification_losses_rows(g, fwd, labels);
    let l = &config.loss;
    let t1 = g.scale(symcl, l.lambda1);
    let t2 = g.scale(mcl, l.lambda2);
    let t3 = g.scale(rec, l.lambda3);
    let c01 = g.add(cls[0], cls[1]);
    let csum = g.add(c01, cls[2]);
    let t4 = g.scale(csum, l.lambda4);
    let s = g.add(t1, t2);
    let s = g.add(s, t3);
    let total = g.add(s, t4);
    Ok(LossNodes {
        total,
        symcl,
        mcl,
        rec,
        cls,
        mcl_features: mcl_feat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let mut c = RunConfig::default();
        assert!(!warmup_schedule(9, &c).symcl);
        assert!(warmup_schedule(10, &c).mcl);
        c.train.warmup = 0;
        assert!(warmup_schedule(0, &c).symcl);
        c.align.enabled = false;
        assert!(!warmup_schedule(50, &c).mcl);
    }

    #[test]
    fn cross_entropy_hand_values() {
        let mut g = Graph::new();
        let u = g.constant(Array2::zeros((1, 3)));
        let l = g.cross_entropy(u, &[1]);
        assert!((g.scalar(l) - 3f64.ln()).abs() < 1e-12);
        let s = g.constant(ndarray::array![[10.0, -10.0]]);
        let l = g.cross_entropy(s, &[0]);
        assert!((g.scalar(l) - 2.061e-9).abs() < 1e-12);
    }
}
