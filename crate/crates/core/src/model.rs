//! The assembled network: encoders, fusion, reconstruction and classifier
//! heads, run as one batched forward pass on the autodiff tape.

use ndarray::{Array1, Array2};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::config::{EncodeMode, RunConfig};
use crate::dataio::{Modality, SampleRecord};
use crate::encoders::{
    fit_raw_centroids, prepare_precomputed, prepare_raw, AbmilPooler, EncodedInputs, GlobalMlp,
    MultiHeadLocalAttention, RawCentroids,
};
use crate::error::{Error, Result};
use crate::fusion::{
    check_k_loc, cma_fuse, final_fuse, pool_local, presence_select, ExpertBank, LocalFusion,
    ModalityBundle, Routing,
};
use crate::graph::{softmax_rows, Graph, Var};
use crate::nn::{stream, Bindings, Linear, ParamStore};
use crate::reconstruction::DecouplerSet;

/// Shapes the network is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub n_classes: usize,
    pub dim: usize,
    pub c: usize,
    pub n_h: usize,
    pub raw: Option<RawMeta>,
}

/// Raw-mode geometry and the corpus centroids fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub n_tokens: usize,
    pub d_token: usize,
    pub centroids: RawCentroids,
}

/// Learned encoders used in raw mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawEncoders {
    pub abmil: AbmilPooler,
    pub mlp: GlobalMlp,
    pub multihead: MultiHeadLocalAttention,
}

/// Linear classifiers on the final global slots, final local slots and `X_out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierHeads {
    /// One shared head, or one per modality.
    pub global: Vec<Linear>,
    pub local: Vec<Linear>,
    pub agg: Linear,
}

impl ClassifierHeads {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        dim: usize,
        n_classes: usize,
        per_modality: bool,
    ) -> Self {
        let mut level = |name: &str| {
            if per_modality {
                Modality::ALL
                    .iter()
                    .map(|m| Linear::new(store, rng, &format!("heads.{name}.{}", m.key()), dim, n_classes))
                    .collect()
            } else {
                vec![Linear::new(store, rng, &format!("heads.{name}"), dim, n_classes)]
            }
        };
        let global = level("global");
        let local = level("local");
        let agg = Linear::new(store, rng, "heads.agg", dim, n_classes);
        Self { global, local, agg }
    }

    pub fn global_head(&self, m: usize) -> &Linear {
        &self.global[m.min(self.global.len() - 1)]
    }

    pub fn local_head(&self, m: usize) -> &Linear {
        &self.local[m.min(self.local.len() - 1)]
    }
}

#[derive(Clone)]
pub struct Model {
    pub config: RunConfig,
    pub meta: ModelMeta,
    pub store: ParamStore,
    pub encoders: Option<RawEncoders>,
    pub local: LocalFusion,
    pub final_bank: ExpertBank,
    pub decouplers: DecouplerSet,
    pub heads: ClassifierHeads,
}

/// Every graph node of one batched forward pass, plus the discrete choices
/// made along the way.
pub struct Forward {
    pub presence: Vec<[bool; 3]>,
    pub global_in: [Var; 3],
    pub local_in: [Var; 3],
    pub local_pooled: [Var; 3],
    pub cma_global: [Var; 3],
    pub cma_local: [Var; 3],
    pub agg_global: Var,
    pub agg_local: Var,
    pub recon_global: [Var; 3],
    pub recon_local: [Var; 3],
    pub final_global: [Var; 3],
    pub final_local: [Var; 3],
    pub out: Var,
    pub logits_global: [Var; 3],
    pub logits_local: [Var; 3],
    pub logits_agg: Var,
    /// Keep flags per local row, `B * rows` per modality.
    pub local_masks: [Vec<bool>; 3],
    /// Experts chosen for each local row.
    pub local_experts: [Vec<Vec<usize>>; 3],
    /// Experts chosen by the final bank, one entry per routed row.
    pub final_experts: Vec<Vec<usize>>,
    /// Patch attention per sample in raw mode.
    pub abmil_weights: Vec<Option<Array1<f64>>>,
}

/// Per-pass switches.
#[derive(Default)]
pub struct PassOptions<'a> {
    /// Dropout stream; `None` runs the encoders in eval mode.
    pub dropout: Option<&'a mut dyn RngCore>,
    /// Make the encoded inputs differentiable leaves.
    pub inputs_as_leaves: bool,
}

impl Model {
    /// Builds a freshly initialized network. Parameters are drawn from a
    /// stream derived from `config.train.seed`.
    pub fn new(config: RunConfig, meta: ModelMeta) -> Result<Self> {
        config.validate()?;
        check_k_loc(config.fusion.k_loc, meta.c.min(meta.n_h))?;
        if config.model.mode == EncodeMode::Raw && meta.raw.is_none() {
            return Err(Error::config("model.mode", "raw mode needs raw-input geometry"));
        }
        let mut store = ParamStore::new();
        let mut rng = stream(config.train.seed, "model_init");
        let d = meta.dim;
        let f = &config.fusion;
        let encoders = match (&config.model.mode, &meta.raw) {
            (EncodeMode::Raw, Some(raw)) => Some(RawEncoders {
                abmil: AbmilPooler::new(&mut store, &mut rng, "encoders.wsi_abmil", d, config.d_attn(d)),
                mlp: GlobalMlp::new(
                    &mut store,
                    &mut rng,
                    "encoders.rna_mlp",
                    raw.n_tokens * raw.d_token,
                    d,
                    config.model.mlp_dropout,
                ),
                multihead: MultiHeadLocalAttention::new(
                    &mut store,
                    &mut rng,
                    "encoders.rna_heads",
                    raw.d_token,
                    d,
                    meta.n_h,
                    config.d_attn(d),
                ),
            }),
            _ => None,
        };
        let local = LocalFusion::new(&mut store, &mut rng, d, f.n_experts, f.top_k, f.renormalize_gate, f.k_loc);
        let final_in = match f.final_routing {
            crate::config::FinalRouting::Independent => d,
            crate::config::FinalRouting::Concat => 6 * d,
        };
        let final_bank = ExpertBank::new(
            &mut store,
            &mut rng,
            "fusion.final_bank",
            final_in,
            d,
            f.n_experts,
            f.top_k,
            f.renormalize_gate,
        );
        let decouplers = DecouplerSet::new(&mut store, &mut rng, d, config.recon.shared_heads);
        let heads = ClassifierHeads::new(&mut store, &mut rng, d, meta.n_classes, config.train.per_modality_heads);
        Ok(Self {
            config,
            meta,
            store,
            encoders,
            local,
            final_bank,
            decouplers,
            heads,
        })
    }

    /// Builds a network for `train` records, fitting the raw-mode corpus
    /// centroids on them when needed.
    pub fn for_training(config: RunConfig, n_classes: usize, dim: usize, train: &[SampleRecord]) -> Result<Self> {
        let raw = match config.model.mode {
            EncodeMode::Precomputed => None,
            EncodeMode::Raw => {
                let probe = train
                    .iter()
                    .find_map(|r| r.raw.rna_tokens.as_ref())
                    .ok_or_else(|| Error::config("model.mode", "raw mode needs rna_tokens in the training data"))?;
                Some(RawMeta {
                    n_tokens: probe.nrows(),
                    d_token: probe.ncols(),
                    centroids: fit_raw_centroids(train, config.model.c, dim, config.train.seed)?,
                })
            }
        };
        let meta = ModelMeta {
            n_classes,
            dim,
            c: config.model.c,
            n_h: config.model.n_h,
            raw,
        };
        Self::new(config, meta)
    }

    pub fn local_rows(&self) -> [usize; 3] {
        [self.meta.c, self.meta.n_h, self.meta.c]
    }

    /// Non-learned inputs of one record.
    pub fn prepare(&self, record: &SampleRecord) -> Result<EncodedInputs> {
        let rows = self.local_rows();
        for m in Modality::ALL {
            let d = record.modality(m);
            if d.global.len() != self.meta.dim || d.local.dim() != (rows[m.index()], self.meta.dim) {
                return Err(Error::Dimension {
                    sample: Some(record.sample_id.clone()),
                    reason: format!("{} tensors do not match the model shapes", m.key()),
                });
            }
        }
        match &self.meta.raw {
            Some(raw) if self.config.model.mode == EncodeMode::Raw => {
                let enc = prepare_raw(record, &raw.centroids, self.meta.n_h, self.meta.dim)?;
                if let Some(t) = &enc.tokens {
                    if t.dim() != (raw.n_tokens, raw.d_token) {
                        return Err(Error::Dimension {
                            sample: Some(record.sample_id.clone()),
                            reason: format!(
                                "rna_tokens shape {:?}, expected ({}, {})",
                                t.dim(),
                                raw.n_tokens,
                                raw.d_token
                            ),
                        });
                    }
                }
                Ok(enc)
            }
            _ => Ok(prepare_precomputed(record)),
        }
    }

    pub fn prepare_all(&self, records: &[SampleRecord]) -> Result<Vec<EncodedInputs>> {
        use rayon::prelude::*;
        records.par_iter().map(|r| self.prepare(r)).collect()
    }

    fn learned_inputs(
        &self,
        g: &mut Graph,
        p: &Bindings,
        enc: &RawEncoders,
        inputs: &[&EncodedInputs],
        dropout: Option<&mut dyn RngCore>,
    ) -> (Var, Var, Var, Vec<Option<Array1<f64>>>) {
        let d = self.meta.dim;
        let raw = self.meta.raw.as_ref().expect("raw meta");
        let b = inputs.len();
        let mut wsi_rows = Vec::with_capacity(b);
        let mut weights = Vec::with_capacity(b);
        for inp in inputs {
            match &inp.patches {
                Some(bag) => {
                    let bag = g.constant(bag.clone());
                    let (pooled, w) = enc.abmil.forward(g, p, bag);
                    weights.push(Some(g.value(w).row(0).to_owned()));
                    wsi_rows.push(g.l2_normalize_rows(pooled));
                }
                None => {
                    weights.push(None);
                    wsi_rows.push(g.constant(Array2::zeros((1, d))));
                }
            }
        }
        let wsi_global = g.concat_rows(&wsi_rows);

        let width = raw.n_tokens * raw.d_token;
        let mut flat = Array2::zeros((b, width));
        let mut rna_present = vec![false; b];
        for (i, inp) in inputs.iter().enumerate() {
            if let Some(t) = &inp.tokens {
                rna_present[i] = true;
                flat.row_mut(i).assign(&Array1::from_iter(t.iter().copied()));
            }
        }
        let flat = g.constant(flat);
        let h = enc.mlp.forward(g, p, flat, dropout);
        let h = g.l2_normalize_rows(h);
        let zeros = g.constant(Array2::zeros((b, d)));
        let rna_global = g.select_rows(rna_present, h, zeros);

        let mut rna_local_rows = Vec::with_capacity(b);
        for inp in inputs {
            match &inp.tokens {
                Some(t) => {
                    let t = g.constant(t.clone());
                    let (out, _) = enc.multihead.forward(g, p, t);
                    rna_local_rows.push(g.l2_normalize_rows(out));
                }
                None => rna_local_rows.push(g.constant(Array2::zeros((self.meta.n_h, d)))),
            }
        }
        let rna_local = g.concat_rows(&rna_local_rows);
        (wsi_global, rna_global, rna_local, weights)
    }

    /// Batched forward pass over `inputs`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bindings,
        inputs: &[&EncodedInputs],
        routing: &mut Routing,
        opts: PassOptions<'_>,
    ) -> Forward {
        let b = inputs.len();
        let d = self.meta.dim;
        let rows = self.local_rows();
        let presence: Vec<[bool; 3]> = inputs.iter().map(|i| i.presence).collect();
        let input = |g: &mut Graph, m: Array2<f64>| {
            if opts.inputs_as_leaves {
                g.leaf(m)
            } else {
                g.constant(m)
            }
        };
        let mut global_in = [0, 1, 2].map(|m| {
            let mut x = Array2::zeros((b, d));
            for (i, inp) in inputs.iter().enumerate() {
                x.row_mut(i).assign(&inp.globals[m]);
            }
            input(g, x)
        });
        let mut local_in = [0, 1, 2].map(|m| {
            let mut x = Array2::zeros((b * rows[m], d));
            for (i, inp) in inputs.iter().enumerate() {
                x.slice_mut(ndarray::s![i * rows[m]..(i + 1) * rows[m], ..]).assign(&inp.locals[m]);
            }
            input(g, x)
        });
        let mut abmil_weights = vec![None; b];
        if let Some(enc) = &self.encoders {
            let (wg, rg, rl, w) = self.learned_inputs(g, p, enc, inputs, opts.dropout);
            global_in[0] = wg;
            global_in[1] = rg;
            local_in[1] = rl;
            abmil_weights = w;
        }

        let f = &self.config.fusion;
        let (cma_global, agg_global) = cma_fuse(g, global_in, f.use_cma);
        let mut local_masks: [Vec<bool>; 3] = Default::default();
        let mut local_experts: [Vec<Vec<usize>>; 3] = Default::default();
        let local_pooled = [0, 1, 2].map(|m| {
            let pres: Vec<bool> = presence.iter().map(|p| p[m]).collect();
            let bank = f.use_moe.then_some(&self.local.banks[m]);
            let lp = pool_local(g, p, bank, &self.local.selectors[m], local_in[m], rows[m], f.k_loc, &pres, routing);
            local_masks[m] = lp.mask;
            local_experts[m] = lp.experts;
            lp.pooled
        });
        let (cma_local, agg_local) = cma_fuse(g, local_pooled, f.use_cma);
        let (recon_global, recon_local) = self.decouplers.forward(g, p, agg_global, agg_local);
        let (final_global, final_local) = if self.config.recon.enabled {
            (
                presence_select(g, &presence, cma_global, recon_global),
                presence_select(g, &presence, cma_local, recon_local),
            )
        } else {
            (cma_global, cma_local)
        };
        let finals = [
            final_global[0],
            final_global[1],
            final_global[2],
            final_local[0],
            final_local[1],
            final_local[2],
        ];
        let bank = f.use_moe.then_some(&self.final_bank);
        let (out, final_experts) = final_fuse(g, p, bank, f.final_routing, finals, routing);
        let logits_global = [0, 1, 2].map(|m| self.heads.global_head(m).forward(g, p, final_global[m]));
        let logits_local = [0, 1, 2].map(|m| self.heads.local_head(m).forward(g, p, final_local[m]));
        let logits_agg = self.heads.agg.forward(g, p, out);
        Forward {
            presence,
            global_in,
            local_in,
            local_pooled,
            cma_global,
            cma_local,
            agg_global,
            agg_local,
            recon_global,
            recon_local,
            final_global,
            final_local,
            out,
            logits_global,
            logits_local,
            logits_agg,
            local_masks,
            local_experts,
            final_experts,
            abmil_weights,
        }
    }

    /// Eval-mode class probabilities from the aggregate head, `(n, n_classes)`.
    pub fn predict(&self, inputs: &[EncodedInputs]) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.len(), self.meta.n_classes));
        let chunk = self.config.train.batch_size.max(1);
        for (ci, part) in inputs.chunks(chunk).enumerate() {
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let refs: Vec<&EncodedInputs> = part.iter().collect();
            let fwd = self.forward(&mut g, &p, &refs, &mut Routing::new(), PassOptions::default());
            let probs = softmax_rows(g.value(fwd.logits_agg));
            out.slice_mut(ndarray::s![ci * chunk..ci * chunk + part.len(), ..]).assign(&probs);
        }
        out
    }

    /// Eval-mode `X_out` rows, `(n, D)`.
    pub fn embed(&self, inputs: &[EncodedInputs]) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.len(), self.meta.dim));
        let chunk = self.config.train.batch_size.max(1);
        for (ci, part) in inputs.chunks(chunk).enumerate() {
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let refs: Vec<&EncodedInputs> = part.iter().collect();
            let fwd = self.forward(&mut g, &p, &refs, &mut Routing::new(), PassOptions::default());
            out.slice_mut(ndarray::s![ci * chunk..ci * chunk + part.len(), ..])
                .assign(g.value(fwd.out));
        }
        out
    }

    /// The six input slots of one record as seen by fusion.
    pub fn encode_sample(&self, record: &SampleRecord) -> Result<ModalityBundle> {
        let enc = self.prepare(record)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let fwd = self.forward(&mut g, &p, &[&enc], &mut Routing::new(), PassOptions::default());
        Ok(ModalityBundle::new(
            enc.presence,
            fwd.global_in.map(|v| g.value(v).row(0).to_owned()),
            fwd.local_in.map(|v| g.value(v).clone()),
        ))
    }

    /// Every slot of one record after an eval-mode pass.
    pub fn bundle(&self, record: &SampleRecord) -> Result<ModalityBundle> {
        let enc = self.prepare(record)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let fwd = self.forward(&mut g, &p, &[&enc], &mut Routing::new(), PassOptions::default());
        let row = |v: Var| g.value(v).row(0).to_owned();
        let mut b = ModalityBundle::new(
            enc.presence,
            fwd.global_in.map(row),
            fwd.local_in.map(|v| g.value(v).clone()),
        );
        b.cma_global = Some(fwd.cma_global.map(row));
        b.cma_local = Some(fwd.cma_local.map(row));
        b.agg_global = Some(row(fwd.agg_global));
        b.agg_local = Some(row(fwd.agg_local));
        b.recon_global = Some(fwd.recon_global.map(row));
        b.recon_local = Some(fwd.recon_local.map(row));
        b.final_global = Some(fwd.final_global.map(row));
        b.final_local = Some(fwd.final_local.map(row));
        b.out = Some(row(fwd.out));
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.model.c = 4;
        c.model.n_h = 4;
        c.fusion.k_loc = 2;
        c.train.epochs = 2;
        c.train.warmup = 1;
        c
    }

    #[test]
    fn forward_shapes_and_presence_substitution() {
        let ds = generate_synthetic(&SyntheticSpec {
            samples_per_class: 5,
            dim: 6,
            c: 4,
            n_h: 4,
            ..Default::default()
        })
        .unwrap();
        let model = Model::for_training(small_config(), 3, 6, &ds.records).unwrap();
        let mut r = ds.records[0].clone();
        r.mask_modality(Modality::Rpt);
        let b = model.bundle(&r).unwrap();
        assert_eq!(b.final_global.as_ref().unwrap()[2], b.recon_global.as_ref().unwrap()[2]);
        assert_eq!(b.final_global.as_ref().unwrap()[0], b.cma_global.as_ref().unwrap()[0]);
        let inputs = model.prepare_all(&ds.records).unwrap();
        let probs = model.predict(&inputs);
        assert_eq!(probs.dim(), (15, 3));
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
