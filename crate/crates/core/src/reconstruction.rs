//! Decoupling heads that regenerate each modality's attended feature from the
//! aggregate, and the reconstruction loss.

use ndarray::{Array1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Modality;
use crate::error::Result;
use crate::fusion::{read, write_once, ModalityBundle};
use crate::graph::{Graph, Var};
use crate::nn::{Bindings, ParamStore, TwoLayer};

/// One two-layer head per modality and level. With `shared`, each modality
/// uses the same head at both levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecouplerSet {
    pub global: Vec<TwoLayer>,
    pub local: Vec<TwoLayer>,
    pub shared: bool,
}

impl DecouplerSet {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, shared: bool) -> Self {
        let global: Vec<TwoLayer> = Modality::ALL
            .iter()
            .map(|m| {
                let name = if shared {
                    format!("recon.{}", m.key())
                } else {
                    format!("recon.global.{}", m.key())
                };
                TwoLayer::new(store, rng, &name, dim, dim, dim)
            })
            .collect();
        let local = if shared {
            global.clone()
        } else {
            Modality::ALL
                .iter()
                .map(|m| TwoLayer::new(store, rng, &format!("recon.local.{}", m.key()), dim, dim, dim))
                .collect()
        };
        Self {
            global,
            local,
            shared,
        }
    }

    /// Reconstructions of the three global and three local attended slots.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, agg_global: Var, agg_local: Var) -> ([Var; 3], [Var; 3]) {
        let rg = [0, 1, 2].map(|i| self.global[i].forward(g, p, agg_global));
        let rl = [0, 1, 2].map(|i| self.local[i].forward(g, p, agg_local));
        (rg, rl)
    }
}

/// Writes the six reconstruction slots of one sample.
pub fn decouple(bundle: &mut ModalityBundle, heads: &DecouplerSet, store: &ParamStore) -> Result<()> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let ag = g.constant(read(&bundle.agg_global, "agg_global")?.clone().insert_axis(Axis(0)));
    let al = g.constant(read(&bundle.agg_local, "agg_local")?.clone().insert_axis(Axis(0)));
    let (rg, rl) = heads.forward(&mut g, &p, ag, al);
    let un = |v: Var| g.value(v).row(0).to_owned();
    write_once(&mut bundle.recon_global, rg.map(un), "recon_global")?;
    write_once(&mut bundle.recon_local, rl.map(un), "recon_local")
}

/// Squared distances between attended slots and their reconstructions,
/// summed over modalities and levels and averaged over the batch. Terms of
/// absent modalities are dropped unless `include_absent`.
pub fn reconstruction_loss_rows(
    g: &mut Graph,
    presence: &[[bool; 3]],
    attended: [[Var; 3]; 2],
    recon: [[Var; 3]; 2],
    include_absent: bool,
) -> Var {
    let b = presence.len();
    let mut total: Option<Var> = None;
    for level in 0..2 {
        for m in 0..3 {
            let diff = g.sub(attended[level][m], recon[level][m]);
            let sq = g.row_dot(diff, diff);
            let w = ndarray::Array2::from_shape_fn((b, 1), |(i, _)| {
                if include_absent || presence[i][m] {
                    1.0
                } else {
                    0.0
                }
            });
            let w = g.constant(w);
            let kept = g.mul(sq, w);
            let s = g.sum(kept);
            total = Some(match total {
                Some(t) => g.add(t, s),
                None => s,
            });
        }
    }
    let total = total.expect("six terms");
    g.scale(total, 1.0 / b.max(1) as f64)
}

/// Reconstruction loss of one sample from its populated slots.
pub fn reconstruction_loss(bundle: &ModalityBundle, include_absent: bool) -> Result<f64> {
    let slots: [&[Array1<f64>; 3]; 4] = [
        read(&bundle.cma_global, "cma_global")?,
        read(&bundle.cma_local, "cma_local")?,
        read(&bundle.recon_global, "recon_global")?,
        read(&bundle.recon_local, "recon_local")?,
    ];
    let mut g = Graph::new();
    let vars: Vec<[Var; 3]> = slots
        .iter()
        .map(|s| [0, 1, 2].map(|i| g.constant(s[i].clone().insert_axis(Axis(0)))))
        .collect();
    let loss = reconstruction_loss_rows(
        &mut g,
        &[bundle.presence],
        [vars[0], vars[1]],
        [vars[2], vars[3]],
        include_absent,
    );
    Ok(g.scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::stream;
    use ndarray::{Array1, Array2};

    fn bundle_with(att: f64, rec: f64) -> ModalityBundle {
        let v = |x: f64| [0, 1, 2].map(|_| Array1::from_elem(3, x));
        let mut b = ModalityBundle::new([true; 3], v(0.0), [0, 1, 2].map(|_| Array2::zeros((2, 3))));
        b.cma_global = Some(v(att));
        b.cma_local = Some(v(att));
        b.recon_global = Some(v(rec));
        b.recon_local = Some(v(rec));
        b
    }

    #[test]
    fn equal_slots_give_zero_loss() {
        assert_eq!(reconstruction_loss(&bundle_with(0.7, 0.7), false).unwrap(), 0.0);
    }

    #[test]
    fn single_residual_gives_its_squared_norm() {
        let mut b = bundle_with(0.0, 0.0);
        b.recon_local.as_mut().unwrap()[1] = Array1::from_vec(vec![1.0, -2.0, 0.5]);
        assert!((reconstruction_loss(&b, false).unwrap() - 5.25).abs() < 1e-12);
    }

    #[test]
    fn absent_terms_are_dropped() {
        let mut b = bundle_with(0.0, 0.0);
        b.presence = [true, false, true];
        b.cma_global.as_mut().unwrap()[1] = Array1::from_elem(3, 9.0);
        assert_eq!(reconstruction_loss(&b, false).unwrap(), 0.0);
        assert!(reconstruction_loss(&b, true).unwrap() > 0.0);
    }

    #[test]
    fn zero_aggregate_gives_zero_reconstruction() {
        let mut store = ParamStore::new();
        let mut rng = stream(1, "recon-test");
        let heads = DecouplerSet::new(&mut store, &mut rng, 4, false);
        let mut b = ModalityBundle::new(
            [true; 3],
            [0, 1, 2].map(|_| Array1::zeros(4)),
            [0, 1, 2].map(|_| Array2::zeros((2, 4))),
        );
        b.agg_global = Some(Array1::zeros(4));
        b.agg_local = Some(Array1::zeros(4));
        decouple(&mut b, &heads, &store).unwrap();
        for v in b.recon_global.unwrap().iter().chain(b.recon_local.unwrap().iter()) {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }
}
