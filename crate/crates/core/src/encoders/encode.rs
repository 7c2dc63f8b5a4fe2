use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_corpus_kmeans, fit_local_gmm};
use crate::dataio::{Modality, SampleRecord};
use crate::error::{Error, Result};

/// Model inputs of one sample that are not produced by learned encoders.
///
/// In precomputed mode every slot is filled. In raw mode the WSI global, RNA
/// global and RNA local slots are placeholders and the learned encoders read
/// `patches` and `tokens` instead.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInputs {
    pub presence: [bool; 3],
    pub globals: [Array1<f64>; 3],
    pub locals: [Array2<f64>; 3],
    pub patches: Option<Array2<f64>>,
    pub tokens: Option<Array2<f64>>,
}

pub fn unit_l2(v: ArrayView1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v.mapv(|x| x / norm)
    } else {
        v.to_owned()
    }
}

pub fn unit_l2_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|x| x / norm);
        }
    }
    out
}

/// Unit-normalized copies of the stored embeddings.
pub fn prepare_precomputed(record: &SampleRecord) -> EncodedInputs {
    let globals = Modality::ALL.map(|m| unit_l2(record.modality(m).global.view()));
    let locals = Modality::ALL.map(|m| unit_l2_rows(&record.modality(m).local));
    EncodedInputs {
        presence: record.presence(),
        globals,
        locals,
        patches: None,
        tokens: None,
    }
}

/// Shared k-means centroids for the GMM-derived local slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCentroids {
    pub wsi: Array2<f64>,
    pub rpt: Array2<f64>,
}

fn stack(bags: Vec<&Array2<f64>>, dim: usize) -> Array2<f64> {
    if bags.is_empty() {
        return Array2::zeros((0, dim));
    }
    let views: Vec<_> = bags.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("bags share a width")
}

/// Fits the corpus-level centroids on every present patch and sentence bag.
pub fn fit_raw_centroids(records: &[SampleRecord], c: usize, dim: usize, seed: u64) -> Result<RawCentroids> {
    let patches = stack(
        records
            .iter()
            .filter(|r| r.modality(Modality::Wsi).present)
            .filter_map(|r| r.raw.patches.as_ref())
            .collect(),
        dim,
    );
    let sentences = stack(
        records
            .iter()
            .filter(|r| r.modality(Modality::Rpt).present)
            .filter_map(|r| r.raw.sentences.as_ref())
            .collect(),
        dim,
    );
    Ok(RawCentroids {
        wsi: fit_corpus_kmeans(patches.view(), c, seed)?,
        rpt: fit_corpus_kmeans(sentences.view(), c, seed.wrapping_add(1))?,
    })
}

fn missing_raw(record: &SampleRecord, what: &str) -> Error {
    Error::Dimension {
        sample: Some(record.sample_id.clone()),
        reason: format!("raw encoding needs {what} for every present modality"),
    }
}

/// Raw-mode preprocessing: per-bag GMM locals for WSI and reports, the mean
/// sentence vector as the report global, and the raw bags for the learned
/// encoders.
pub fn prepare_raw(
    record: &SampleRecord,
    centroids: &RawCentroids,
    n_h: usize,
    dim: usize,
) -> Result<EncodedInputs> {
    let presence = record.presence();
    let c = centroids.wsi.nrows();
    let wrap = |e: Error| match e {
        Error::Numerical { iteration, reason } => Error::Numerical {
            iteration,
            reason: format!("sample {}: {reason}", record.sample_id),
        },
        other => other,
    };
    let mut globals = [Array1::zeros(dim), Array1::zeros(dim), Array1::zeros(dim)];
    let mut locals = [Array2::zeros((c, dim)), Array2::zeros((n_h, dim)), Array2::zeros((c, dim))];
    let mut patches = None;
    let mut tokens = None;
    if presence[Modality::Wsi.index()] {
        let bag = record.raw.patches.as_ref().ok_or_else(|| missing_raw(record, "patches"))?;
        let fit = fit_local_gmm(bag.view(), centroids.wsi.view()).map_err(wrap)?;
        locals[0] = unit_l2_rows(&fit.means);
        patches = Some(bag.clone());
    }
    if presence[Modality::Rna.index()] {
        let t = record.raw.rna_tokens.as_ref().ok_or_else(|| missing_raw(record, "rna_tokens"))?;
        tokens = Some(t.clone());
    }
    if presence[Modality::Rpt.index()] {
        let s = record.raw.sentences.as_ref().ok_or_else(|| missing_raw(record, "sentences"))?;
        if s.nrows() == 0 {
            return Err(Error::EmptyBag);
        }
        let fit = fit_local_gmm(s.view(), centroids.rpt.view()).map_err(wrap)?;
        locals[2] = unit_l2_rows(&fit.means);
        globals[2] = unit_l2(s.mean_axis(Axis(0)).expect("non-empty").view());
    }
    Ok(EncodedInputs {
        presence,
        globals,
        locals,
        patches,
        tokens,
    })
}

/// Applies [`prepare_raw`] to every record in parallel.
pub fn prepare_raw_all(
    records: &[SampleRecord],
    centroids: &RawCentroids,
    n_h: usize,
    dim: usize,
) -> Result<Vec<EncodedInputs>> {
    records
        .par_iter()
        .map(|r| prepare_raw(r, centroids, n_h, dim))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, RawSynth, SyntheticSpec};

    #[test]
    fn precomputed_vectors_are_unit_normalized() {
        let ds = generate_synthetic(&SyntheticSpec {
            samples_per_class: 5,
            dim: 4,
            c: 2,
            n_h: 3,
            ..Default::default()
        })
        .unwrap();
        let mut r = ds.records[0].clone();
        r.mask_modality(Modality::Rna);
        let enc = prepare_precomputed(&r);
        let v = &r.modality(Modality::Wsi).global;
        let expected = v / v.dot(v).sqrt();
        assert_eq!(enc.globals[0], expected);
        assert_eq!(enc.presence, [true, false, true]);
        assert!(enc.globals[1].iter().all(|&x| x == 0.0));
        assert!(enc.locals[1].iter().all(|&x| x == 0.0));
        for row in enc.locals[2].rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_preparation_has_configured_shapes() {
        let ds = generate_synthetic(&SyntheticSpec {
            samples_per_class: 5,
            dim: 4,
            c: 3,
            n_h: 2,
            raw: Some(RawSynth {
                n_patches: 12,
                n_tokens: 5,
                d_token: 3,
                n_sentences: 6,
            }),
            ..Default::default()
        })
        .unwrap();
        let centroids = fit_raw_centroids(&ds.records, 3, 4, 0).unwrap();
        let enc = prepare_raw_all(&ds.records, &centroids, 2, 4).unwrap();
        assert_eq!(enc[0].locals[0].dim(), (3, 4));
        assert_eq!(enc[0].locals[1].dim(), (2, 4));
        assert_eq!(enc[0].tokens.as_ref().unwrap().dim(), (5, 3));
        assert!(enc.iter().all(|e| e.locals[2].iter().all(|v| v.is_finite())));
    }
}
