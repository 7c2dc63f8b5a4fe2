//! Run configuration.
//!
//! Every hyperparameter is addressable by a dotted key (`fusion.k_loc`,
//! `loss.lambda2`, ...). Config files are flat `key = value` text with `#`
//! comments; the resolved configuration round-trips through that format.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    /// Use the precomputed global/local tensors of each record.
    Precomputed,
    /// Compute WSI and RNA representations from raw inputs with the learned encoders.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalRouting {
    /// Each of the six final slots is routed through the final experts; outputs summed.
    Independent,
    /// The six slots are concatenated and routed as one token.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    Multiply,
    Divide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Victims for each modality drawn independently (bounded resampling to
    /// keep one modality per sample).
    Independent,
    /// Victims drawn preferring samples that currently have the fewest masked
    /// modalities, so incomplete samples are spread as widely as possible.
    Spread,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MaskedTrainMaskedTest,
    MaskedTrainUnmaskedTest,
    RemovedTrainUnmaskedTest,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::MaskedTrainMaskedTest,
        Scenario::MaskedTrainUnmaskedTest,
        Scenario::RemovedTrainUnmaskedTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::MaskedTrainMaskedTest => "masked_train_masked_test",
            Scenario::MaskedTrainUnmaskedTest => "masked_train_unmasked_test",
            Scenario::RemovedTrainUnmaskedTest => "removed_train_unmasked_test",
        }
    }

    pub fn train_label(self) -> &'static str {
        match self {
            Scenario::RemovedTrainUnmaskedTest => "Removed",
            _ => "Masked",
        }
    }

    pub fn test_label(self) -> &'static str {
        match self {
            Scenario::MaskedTrainMaskedTest => "Masked",
            _ => "Unmasked",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: EncodeMode,
    /// Local components per WSI / report.
    pub c: usize,
    /// RNA attention heads (= RNA local rows).
    pub n_h: usize,
    /// ABMIL hidden width; 0 means D/4.
    pub d_attn: usize,
    pub mlp_dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub n_experts: usize,
    pub top_k: usize,
    pub k_loc: usize,
    pub renormalize_gate: bool,
    pub final_routing: FinalRouting,
    pub use_cma: bool,
    pub use_moe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub enabled: bool,
    pub rec_loss_on_masked: bool,
    pub shared_heads: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub enabled: bool,
    pub symcl_tau: f64,
    pub symcl_tau_mode: TauMode,
    pub mcl_tau: f64,
    pub mcl_normalize: bool,
    pub m_comp: usize,
    pub momentum: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_reg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub holdout_fold: usize,
    pub per_modality_heads: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub scenario: Scenario,
    pub fraction: f64,
    pub strategy: MaskStrategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k_folds: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub fusion: FusionConfig,
    pub recon: ReconConfig,
    pub align: AlignConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub mask: MaskConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                mode: EncodeMode::Precomputed,
                c: 16,
                n_h: 16,
                d_attn: 0,
                mlp_dropout: 0.2,
            },
            fusion: FusionConfig {
                n_experts: 5,
                top_k: 2,
                k_loc: 8,
                renormalize_gate: true,
                final_routing: FinalRouting::Independent,
                use_cma: true,
                use_moe: true,
            },
            recon: ReconConfig {
                enabled: true,
                rec_loss_on_masked: false,
                shared_heads: false,
            },
            align: AlignConfig {
                enabled: true,
                symcl_tau: 10.0,
                symcl_tau_mode: TauMode::Multiply,
                mcl_tau: 0.1,
                mcl_normalize: true,
                m_comp: 3,
                momentum: 0.999,
                sinkhorn_iters: 10,
                sinkhorn_reg: 1.0,
            },
            loss: LossConfig {
                lambda1: 1.0,
                lambda2: 2.0,
                lambda3: 1.0,
                lambda4: 1.0,
            },
            train: TrainConfig {
                lr: 1e-4,
                batch_size: 32,
                epochs: 100,
                warmup: 10,
                beta1: 0.9,
                beta2: 0.999,
                weight_decay: 0.0,
                grad_clip: 5.0,
                seed: 0,
                holdout_fold: 0,
                per_modality_heads: false,
            },
            mask: MaskConfig {
                scenario: Scenario::MaskedTrainMaskedTest,
                fraction: 0.0,
                strategy: MaskStrategy::Spread,
            },
            eval: EvalConfig {
                k_folds: 5,
                seeds: 3,
            },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    /// Sets one dotted key from its textual value. Unknown keys and values of
    /// the wrong type are rejected.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::config(key, "unknown key"))?;
        }
        let new = match slot {
            Value::Bool(_) => Value::Bool(
                raw.parse()
                    .map_err(|_| Error::config(key, format!("expected true/false, got `{raw}`")))?,
            ),
            Value::Number(n) => {
                if n.is_u64() {
                    Value::from(
                        raw.parse::<u64>()
                            .map_err(|_| Error::config(key, format!("expected integer, got `{raw}`")))?,
                    )
                } else {
                    let f: f64 = raw
                        .parse()
                        .map_err(|_| Error::config(key, format!("expected number, got `{raw}`")))?;
                    if !f.is_finite() {
                        return Err(Error::config(key, "value must be finite"));
                    }
                    Value::from(f)
                }
            }
            Value::String(_) => Value::String(raw.to_string()),
            _ => return Err(Error::config(key, "not a settable leaf")),
        };
        *slot = new;
        *self = serde_json::from_value(tree)
            .map_err(|e| Error::config(key, format!("invalid value `{raw}`: {e}")))?;
        Ok(())
    }

    /// Reads a dotted key as text.
    pub fn get(&self, key: &str) -> Option<String> {
        self.entries()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    /// All `(key, value)` pairs in stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &tree, &mut out);
        out.sort();
        out
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_text().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn d_attn(&self, dim: usize) -> usize {
        if self.model.d_attn == 0 {
            (dim / 4).max(1)
        } else {
            self.model.d_attn
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
            }
        };
        let nonzero = |key: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::config(key, "must be >= 1"))
            }
        };
        nonzero("model.c", self.model.c)?;
        nonzero("model.n_h", self.model.n_h)?;
        if !(0.0..1.0).contains(&self.model.mlp_dropout) {
            return Err(Error::config("model.mlp_dropout", "must lie in [0, 1)"));
        }
        nonzero("fusion.n_experts", self.fusion.n_experts)?;
        nonzero("fusion.top_k", self.fusion.top_k)?;
        if self.fusion.top_k > self.fusion.n_experts {
            return Err(Error::config(
                "fusion.top_k",
                format!(
                    "top_k {} exceeds n_experts {}",
                    self.fusion.top_k, self.fusion.n_experts
                ),
            ));
        }
        nonzero("fusion.k_loc", self.fusion.k_loc)?;
        let min_rows = self.model.c.min(self.model.n_h);
        if self.fusion.k_loc > min_rows {
            return Err(Error::config(
                "fusion.k_loc",
                format!("k_loc {} exceeds local rows {min_rows}", self.fusion.k_loc),
            ));
        }
        positive("align.symcl_tau", self.align.symcl_tau)?;
        positive("align.mcl_tau", self.align.mcl_tau)?;
        positive("align.sinkhorn_reg", self.align.sinkhorn_reg)?;
        nonzero("align.m_comp", self.align.m_comp)?;
        unit("align.momentum", self.align.momentum)?;
        for (k, v) in [
            ("loss.lambda1", self.loss.lambda1),
            ("loss.lambda2", self.loss.lambda2),
            ("loss.lambda3", self.loss.lambda3),
            ("loss.lambda4", self.loss.lambda4),
        ] {
            if v < 0.0 {
                return Err(Error::config(k, format!("must be >= 0, got {v}")));
            }
        }
        positive("train.lr", self.train.lr)?;
        nonzero("train.batch_size", self.train.batch_size)?;
        nonzero("train.epochs", self.train.epochs)?;
        if self.train.warmup >= self.train.epochs {
            return Err(Error::config(
                "train.warmup",
                format!(
                    "warm-up ({}) must be smaller than epochs ({})",
                    self.train.warmup, self.train.epochs
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.train.beta1) || !(0.0..1.0).contains(&self.train.beta2) {
            return Err(Error::config("train.beta1", "Adam betas must lie in [0, 1)"));
        }
        if self.train.weight_decay < 0.0 {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        if self.train.grad_clip < 0.0 {
            return Err(Error::config("train.grad_clip", "must be >= 0 (0 disables)"));
        }
        unit("mask.fraction", self.mask.fraction)?;
        if self.eval.k_folds < 2 {
            return Err(Error::config("eval.k_folds", "need at least 2 folds"));
        }
        nonzero("eval.seeds", self.eval.seeds)?;
        if self.train.holdout_fold >= self.eval.k_folds {
            return Err(Error::config(
                "train.holdout_fold",
                format!("must be < k_folds ({})", self.eval.k_folds),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn set_dotted_keys() {
        let mut c = RunConfig::default();
        c.set("fusion.k_loc", "4").unwrap();
        c.set("loss.lambda2", "0.5").unwrap();
        c.set("fusion.renormalize_gate", "false").unwrap();
        c.set("mask.scenario", "removed_train_unmasked_test").unwrap();
        assert_eq!(c.fusion.k_loc, 4);
        assert_eq!(c.loss.lambda2, 0.5);
        assert!(!c.fusion.renormalize_gate);
        assert_eq!(c.mask.scenario, Scenario::RemovedTrainUnmaskedTest);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("fusion.nope", "1").is_err());
        assert!(c.set("fusion.k_loc", "abc").is_err());
        assert!(c.set("mask.scenario", "sometimes").is_err());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn kv_text_round_trip() {
        let mut c = RunConfig::default();
        c.set("train.seed", "42").unwrap();
        c.set("align.mcl_tau", "0.25").unwrap();
        let text = c.to_kv_text();
        let back = RunConfig::from_kv_text(&format!("# comment\n{text}")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn warmup_must_be_below_epochs() {
        let err = RunConfig::from_kv_text("train.epochs = 5\ntrain.warmup = 5").unwrap_err();
        assert!(err.to_string().contains("warm-up"));
    }

    #[test]
    fn hash_changes_with_component_switch() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("fusion.use_cma", "false").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
