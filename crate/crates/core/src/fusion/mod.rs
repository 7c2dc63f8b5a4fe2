//! Cross-modal attention, sparse mixture-of-experts local selection and the
//! presence-aware final aggregation.

mod cma;
mod local;
mod moe;
mod routing;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cma::{cma_fuse, cma_pair, cma_pair_rows};
pub use local::{check_k_loc, pool_local, select_local, LocalPool, LocalSelection, LocalSelector};
pub use moe::{gate_softmax, gate_weights, moe_transform, ExpertBank, MoeOutput};
pub use routing::{top_k_indices, Routing};

use crate::config::FinalRouting;
use crate::dataio::Modality;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bindings, ParamStore};

/// Every representation of one sample as it flows through fusion.
///
/// Input slots are set at construction; each derived slot is written once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityBundle {
    pub presence: [bool; 3],
    pub global: [Array1<f64>; 3],
    pub local: [Array2<f64>; 3],
    pub cma_global: Option<[Array1<f64>; 3]>,
    pub cma_local: Option<[Array1<f64>; 3]>,
    pub agg_global: Option<Array1<f64>>,
    pub agg_local: Option<Array1<f64>>,
    pub recon_global: Option<[Array1<f64>; 3]>,
    pub recon_local: Option<[Array1<f64>; 3]>,
    pub final_global: Option<[Array1<f64>; 3]>,
    pub final_local: Option<[Array1<f64>; 3]>,
    pub out: Option<Array1<f64>>,
}

pub(crate) fn write_once<T>(slot: &mut Option<T>, value: T, name: &str) -> Result<()> {
    if slot.is_some() {
        return Err(Error::State(format!("slot `{name}` already written in this pass")));
    }
    *slot = Some(value);
    Ok(())
}

pub(crate) fn read<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    slot.as_ref()
        .ok_or_else(|| Error::State(format!("slot `{name}` has not been computed")))
}

impl ModalityBundle {
    pub fn new(presence: [bool; 3], global: [Array1<f64>; 3], local: [Array2<f64>; 3]) -> Self {
        Self {
            presence,
            global,
            local,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.global[0].len()
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

fn rows3(g: &mut Graph, v: &[Array1<f64>; 3]) -> [Var; 3] {
    [0, 1, 2].map(|i| g.constant(row(&v[i])))
}

fn unrow(g: &Graph, v: Var) -> Array1<f64> {
    g.value(v).row(0).to_owned()
}

/// Writes the global attended slots and their aggregate.
pub fn cma_global(bundle: &mut ModalityBundle) -> Result<()> {
    let mut g = Graph::new();
    let x = rows3(&mut g, &bundle.global);
    let (att, agg) = cma_fuse(&mut g, x, true);
    write_once(&mut bundle.cma_global, att.map(|v| unrow(&g, v)), "cma_global")?;
    write_once(&mut bundle.agg_global, unrow(&g, agg), "agg_global")
}

/// Local-fusion parameters: one bank and selector per modality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalFusion {
    pub banks: Vec<ExpertBank>,
    pub selectors: Vec<LocalSelector>,
    pub k_loc: usize,
}

impl LocalFusion {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dim: usize,
        n_experts: usize,
        top_k: usize,
        renormalize: bool,
        k_loc: usize,
    ) -> Self {
        let mut banks = Vec::new();
        let mut selectors = Vec::new();
        for m in Modality::ALL {
            banks.push(ExpertBank::new(
                store,
                rng,
                &format!("fusion.local_bank.{}", m.key()),
                dim,
                dim,
                n_experts,
                top_k,
                renormalize,
            ));
            selectors.push(LocalSelector::new(store, rng, &format!("fusion.selector.{}", m.key()), dim));
        }
        Self {
            banks,
            selectors,
            k_loc,
        }
    }
}

/// Writes the local attended slots and their aggregate; returns each
/// modality's selection.
pub fn cma_local(
    bundle: &mut ModalityBundle,
    fusion: &LocalFusion,
    store: &ParamStore,
) -> Result<[LocalSelection; 3]> {
    let mut sel = Vec::with_capacity(3);
    for m in Modality::ALL {
        let i = m.index();
        let mut s = select_local(bundle.local[i].view(), &fusion.selectors[i], &fusion.banks[i], store, fusion.k_loc)?;
        if !bundle.presence[i] {
            s.pooled.fill(0.0);
        }
        sel.push(s);
    }
    let mut g = Graph::new();
    let pooled = [0, 1, 2].map(|i| g.constant(row(&sel[i].pooled)));
    let (att, agg) = cma_fuse(&mut g, pooled, true);
    write_once(&mut bundle.cma_local, att.map(|v| unrow(&g, v)), "cma_local")?;
    write_once(&mut bundle.agg_local, unrow(&g, agg), "agg_local")?;
    let mut it = sel.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Substitutes reconstructions for absent modalities: row `i` of slot `m` is
/// copied from `attended[m]` when sample `i` has modality `m`, otherwise from
/// `recon[m]`.
pub fn presence_select(g: &mut Graph, presence: &[[bool; 3]], attended: [Var; 3], recon: [Var; 3]) -> [Var; 3] {
    Modality::ALL.map(|m| {
        let mask: Vec<bool> = presence.iter().map(|p| p[m.index()]).collect();
        g.select_rows(mask, attended[m.index()], recon[m.index()])
    })
}

/// Fuses the six final slots (global then local, modality order) into `X_out`.
///
/// With a bank, `Independent` routes each slot through the bank separately
/// and sums the outputs; `Concat` routes the concatenated slots once. Without
/// a bank the slots are summed.
pub fn final_fuse(
    g: &mut Graph,
    p: &Bindings,
    bank: Option<&ExpertBank>,
    mode: FinalRouting,
    finals: [Var; 6],
    routing: &mut Routing,
) -> (Var, Vec<Vec<usize>>) {
    let b = g.shape(finals[0]).0;
    match (bank, mode) {
        (None, _) => {
            let mut acc = finals[0];
            for &f in &finals[1..] {
                acc = g.add(acc, f);
            }
            (acc, Vec::new())
        }
        (Some(bank), FinalRouting::Independent) => {
            let stacked = g.concat_rows(&finals);
            let moe = bank.forward(g, p, stacked, routing);
            let mut sum = Array2::zeros((b, 6 * b));
            for s in 0..6 {
                for i in 0..b {
                    sum[[i, s * b + i]] = 1.0;
                }
            }
            let sum = g.constant(sum);
            (g.matmul(sum, moe.out), moe.selected)
        }
        (Some(bank), FinalRouting::Concat) => {
            let joined = g.concat_cols(&finals);
            let moe = bank.forward(g, p, joined, routing);
            (moe.out, moe.selected)
        }
    }
}

/// Writes the final slots and `X_out` for one sample; returns the experts
/// selected by the final bank.
pub fn final_aggregate(
    bundle: &mut ModalityBundle,
    bank: &ExpertBank,
    mode: FinalRouting,
    store: &ParamStore,
) -> Result<Vec<Vec<usize>>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let cg = rows3(&mut g, read(&bundle.cma_global, "cma_global")?);
    let cl = rows3(&mut g, read(&bundle.cma_local, "cma_local")?);
    let rg = rows3(&mut g, read(&bundle.recon_global, "recon_global")?);
    let rl = rows3(&mut g, read(&bundle.recon_local, "recon_local")?);
    let presence = [bundle.presence];
    let fg = presence_select(&mut g, &presence, cg, rg);
    let fl = presence_select(&mut g, &presence, cl, rl);
    let mut routing = Routing::new();
    let finals = [fg[0], fg[1], fg[2], fl[0], fl[1], fl[2]];
    let (out, selected) = final_fuse(&mut g, &p, Some(bank), mode, finals, &mut routing);
    write_once(&mut bundle.final_global, fg.map(|v| unrow(&g, v)), "final_global")?;
    write_once(&mut bundle.final_local, fl.map(|v| unrow(&g, v)), "final_local")?;
    write_once(&mut bundle.out, unrow(&g, out), "out")?;
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};

    fn random_bundle(dim: usize, rows: usize, seed: u64) -> ModalityBundle {
        let mut rng = stream(seed, "bundle");
        let global = [0, 1, 2].map(|_| Array1::from_shape_fn(dim, |_| normal(&mut rng)));
        let local = [0, 1, 2].map(|_| Array2::from_shape_fn((rows, dim), |_| normal(&mut rng)));
        ModalityBundle::new([true; 3], global, local)
    }

    #[test]
    fn zero_partners_leave_globals_unchanged() {
        let mut b = random_bundle(4, 2, 1);
        b.global[1].fill(0.0);
        b.global[2].fill(0.0);
        let v = b.global[0].clone();
        cma_global(&mut b).unwrap();
        let att = b.cma_global.as_ref().unwrap();
        assert_eq!(att[0], v);
        assert!(att[1].iter().all(|&x| x == 0.0));
        assert!(att[2].iter().all(|&x| x == 0.0));
        assert_eq!(b.agg_global.unwrap(), v);
    }

    #[test]
    fn derived_slots_are_written_once() {
        let mut b = random_bundle(3, 2, 2);
        cma_global(&mut b).unwrap();
        assert!(matches!(cma_global(&mut b), Err(Error::State(_))));
    }

    #[test]
    fn final_slots_follow_presence() {
        let mut store = ParamStore::new();
        let mut rng = stream(3, "final");
        let bank = ExpertBank::new(&mut store, &mut rng, "final", 3, 3, 5, 2, true);
        let mut b = random_bundle(3, 2, 4);
        b.presence = [false, true, true];
        cma_global(&mut b).unwrap();
        b.cma_local = Some([0, 1, 2].map(|i| b.global[i].mapv(|x| x * 0.5)));
        b.recon_global = Some([0, 1, 2].map(|i| b.global[i].mapv(|x| x + 1.0)));
        b.recon_local = Some([0, 1, 2].map(|i| b.global[i].mapv(|x| x - 1.0)));
        final_aggregate(&mut b, &bank, FinalRouting::Independent, &store).unwrap();
        let fg = b.final_global.as_ref().unwrap();
        assert_eq!(fg[0], b.recon_global.as_ref().unwrap()[0]);
        assert_eq!(fg[1], b.cma_global.as_ref().unwrap()[1]);
        assert_eq!(b.final_local.as_ref().unwrap()[0], b.recon_local.as_ref().unwrap()[0]);
        assert!(b.out.as_ref().unwrap().iter().all(|v| v.is_finite()));
    }
}
