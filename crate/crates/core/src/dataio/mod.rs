//! Dataset schema, ingestion, synthetic generation, masking and folds.

mod folds;
mod io;
mod mask;
mod synthetic;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::stratified_folds;
pub use io::{ingest, write_dataset, Ingested, MAX_PATCHES};
pub use mask::{apply_mask, drop_incomplete};
pub use synthetic::{generate_synthetic, RawSynth, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Wsi,
    Rna,
    Rpt,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Wsi, Modality::Rna, Modality::Rpt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Modality::Wsi => "wsi",
            Modality::Rna => "rna",
            Modality::Rpt => "rpt",
        }
    }

    /// The two partner modalities in fixed order.
    pub fn partners(self) -> [Modality; 2] {
        match self {
            Modality::Wsi => [Modality::Rna, Modality::Rpt],
            Modality::Rna => [Modality::Wsi, Modality::Rpt],
            Modality::Rpt => [Modality::Wsi, Modality::Rna],
        }
    }
}

/// Per-modality tensors of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityData {
    pub present: bool,
    pub global: Array1<f64>,
    pub local: Array2<f64>,
}

impl ModalityData {
    pub fn absent(dim: usize, rows: usize) -> Self {
        Self {
            present: false,
            global: Array1::zeros(dim),
            local: Array2::zeros((rows, dim)),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.global.iter().all(|&v| v == 0.0) && self.local.iter().all(|&v| v == 0.0)
    }

    pub fn zero_fill(&mut self) {
        self.present = false;
        self.global.fill(0.0);
        self.local.fill(0.0);
    }
}

/// Optional raw inputs consumed by the learned encoders.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawInputs {
    /// WSI patch embeddings `(N_patch, D)`.
    pub patches: Option<Array2<f64>>,
    /// Patch grid coordinates (for heatmaps), one `[x, y]` per patch.
    pub patch_coords: Option<Vec<[f64; 2]>>,
    /// RNA token matrix `(N_tokens, D_token)`.
    pub rna_tokens: Option<Array2<f64>>,
    /// Report sentence embeddings `(N_sentences, D)`.
    pub sentences: Option<Array2<f64>>,
}

impl RawInputs {
    pub fn is_empty(&self) -> bool {
        self.patches.is_none() && self.rna_tokens.is_none() && self.sentences.is_none()
    }

    pub fn clear_modality(&mut self, m: Modality) {
        match m {
            Modality::Wsi => {
                self.patches = None;
                self.patch_coords = None;
            }
            Modality::Rna => self.rna_tokens = None,
            Modality::Rpt => self.sentences = None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: usize,
    pub modalities: [ModalityData; 3],
    pub raw: RawInputs,
}

impl SampleRecord {
    pub fn modality(&self, m: Modality) -> &ModalityData {
        &self.modalities[m.index()]
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut ModalityData {
        &mut self.modalities[m.index()]
    }

    pub fn presence(&self) -> [bool; 3] {
        [
            self.modalities[0].present,
            self.modalities[1].present,
            self.modalities[2].present,
        ]
    }

    pub fn is_complete(&self) -> bool {
        self.modalities.iter().all(|m| m.present)
    }

    pub fn n_present(&self) -> usize {
        self.modalities.iter().filter(|m| m.present).count()
    }

    /// Marks `m` absent and zero-fills its tensors (`X ⊙ M` with `M = 0`).
    pub fn mask_modality(&mut self, m: Modality) {
        self.modality_mut(m).zero_fill();
        self.raw.clear_modality(m);
    }

    /// Checks the record invariants against the manifest geometry.
    pub fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.label >= manifest.n_classes {
            return Err(Error::Label {
                label: self.label,
                n_classes: manifest.n_classes,
            });
        }
        for m in Modality::ALL {
            let data = self.modality(m);
            let rows = manifest.local_rows(m);
            if data.global.len() != manifest.dim {
                return Err(Error::Dimension {
                    sample: Some(self.sample_id.clone()),
                    reason: format!(
                        "{} global has {} values, manifest D = {}",
                        m.key(),
                        data.global.len(),
                        manifest.dim
                    ),
                });
            }
            if data.local.dim() != (rows, manifest.dim) {
                return Err(Error::Dimension {
                    sample: Some(self.sample_id.clone()),
                    reason: format!(
                        "{} local has shape {:?}, expected ({rows}, {})",
                        m.key(),
                        data.local.dim(),
                        manifest.dim
                    ),
                });
            }
            if data.present {
                let finite = data.global.iter().chain(data.local.iter()).all(|v| v.is_finite());
                if !finite {
                    return Err(Error::Dimension {
                        sample: Some(self.sample_id.clone()),
                        reason: format!("{} contains non-finite values", m.key()),
                    });
                }
            } else if !data.is_zero() {
                return Err(Error::Dimension {
                    sample: Some(self.sample_id.clone()),
                    reason: format!("{} is absent but not zero-filled", m.key()),
                });
            }
        }
        if let Some(p) = &self.raw.patches {
            if p.ncols() != manifest.dim {
                return Err(Error::Dimension {
                    sample: Some(self.sample_id.clone()),
                    reason: format!("patch embeddings have {} columns, manifest D = {}", p.ncols(), manifest.dim),
                });
            }
        }
        if self.n_present() == 0 {
            return Err(Error::Dimension {
                sample: Some(self.sample_id.clone()),
                reason: "sample has no present modality".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub n_classes: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "N_h")]
    pub n_h: usize,
    pub folds: BTreeMap<String, usize>,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn local_rows(&self, m: Modality) -> usize {
        match m {
            Modality::Rna => self.n_h,
            _ => self.c,
        }
    }
}

/// Records plus manifest, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Fold index per record, following the manifest map.
    pub fn fold_of(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                self.manifest.folds.get(&r.sample_id).copied().ok_or_else(|| {
                    Error::config("folds", format!("sample `{}` has no fold", r.sample_id))
                })
            })
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<SampleRecord> {
        idx.iter().map(|&i| self.records[i].clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.len() != self.manifest.n_samples {
            return Err(Error::Dimension {
                sample: None,
                reason: format!(
                    "manifest lists {} samples, found {}",
                    self.manifest.n_samples,
                    self.records.len()
                ),
            });
        }
        for r in &self.records {
            r.validate(&self.manifest)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partners_exclude_self() {
        for m in Modality::ALL {
            assert!(!m.partners().contains(&m));
        }
    }

    #[test]
    fn masking_zero_fills_and_clears_flag() {
        let mut rec = SampleRecord {
            sample_id: "s".into(),
            label: 0,
            modalities: [
                ModalityData {
                    present: true,
                    global: Array1::from_elem(4, 1.5),
                    local: Array2::from_elem((2, 4), -0.5),
                },
                ModalityData::absent(4, 2),
                ModalityData::absent(4, 2),
            ],
            raw: RawInputs::default(),
        };
        rec.mask_modality(Modality::Wsi);
        assert!(!rec.modality(Modality::Wsi).present);
        assert!(rec.modality(Modality::Wsi).is_zero());
    }
}
