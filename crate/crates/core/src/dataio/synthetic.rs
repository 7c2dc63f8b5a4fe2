use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    stratified_folds, Dataset, DatasetManifest, Modality, ModalityData, Provenance, RawInputs,
    SampleRecord,
};
use crate::error::{Error, Result};
use crate::nn::{normal, stream, Rng64};

/// Raw-input geometry for synthetic datasets used with the learned encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSynth {
    pub n_patches: usize,
    pub n_tokens: usize,
    pub d_token: usize,
    pub n_sentences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub c: usize,
    pub n_h: usize,
    /// Distance between class centroids, in units of the within-class latent std.
    pub class_separation: f64,
    /// Correlation of the three modality latents around the class centroid.
    pub modality_correlation: f64,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub raw: Option<RawSynth>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            samples_per_class: 40,
            dim: 32,
            c: 16,
            n_h: 16,
            class_separation: 4.0,
            modality_correlation: 0.5,
            noise_std: 1.0,
            seed: 0,
            raw: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("n_classes", self.n_classes),
            ("samples_per_class", self.samples_per_class),
            ("dim", self.dim),
            ("c", self.c),
            ("n_h", self.n_h),
        ];
        for (field, v) in nonzero {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "need at least 2 classes"));
        }
        if self.n_classes > self.dim {
            return Err(Error::config(
                "n_classes",
                format!("{} classes need dim >= n_classes (dim = {})", self.n_classes, self.dim),
            ));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(Error::config("class_separation", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.modality_correlation) {
            return Err(Error::config("modality_correlation", "must lie in [0, 1]"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be > 0"));
        }
        if let Some(raw) = &self.raw {
            for (field, v) in [
                ("raw.n_patches", raw.n_patches),
                ("raw.n_tokens", raw.n_tokens),
                ("raw.d_token", raw.d_token),
                ("raw.n_sentences", raw.n_sentences),
            ] {
                if v == 0 {
                    return Err(Error::config(field, "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut Rng64, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| normal(rng))
}

/// `n` orthonormal directions in `dim` dimensions (Gram-Schmidt on Gaussians).
fn orthonormal(rng: &mut Rng64, n: usize, dim: usize) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Three-modality dataset with controllable class separation.
///
/// Class centroids sit on a scaled simplex so every pair is exactly
/// `class_separation` apart. Each sample draws one latent per modality with
/// pairwise correlation `modality_correlation` and unit within-class std.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, "generate_synthetic");
    let scale = spec.class_separation / std::f64::consts::SQRT_2;
    let centroids: Vec<Array1<f64>> = orthonormal(&mut rng, spec.n_classes, spec.dim)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let rna_projection = spec.raw.as_ref().map(|raw| {
        Array2::from_shape_fn((spec.dim, raw.d_token), |_| {
            normal(&mut rng) / (spec.dim as f64).sqrt()
        })
    });
    let rho = spec.modality_correlation;
    let n = spec.n_classes * spec.samples_per_class;
    let mut records = Vec::with_capacity(n);
    for class in 0..spec.n_classes {
        for j in 0..spec.samples_per_class {
            let shared = gaussian_vec(&mut rng, spec.dim);
            let mut latents = Vec::with_capacity(3);
            for _ in Modality::ALL {
                let own = gaussian_vec(&mut rng, spec.dim);
                let eps = &shared * rho.sqrt() + &own * (1.0 - rho).sqrt();
                latents.push(&centroids[class] + &eps);
            }
            let mut make = |latent: &Array1<f64>, rows: usize| {
                let global = latent + &(gaussian_vec(&mut rng, spec.dim) * spec.noise_std);
                let local = Array2::from_shape_fn((rows, spec.dim), |(_, d)| {
                    latent[d] + spec.noise_std * normal(&mut rng)
                });
                ModalityData {
                    present: true,
                    global,
                    local,
                }
            };
            let modalities = [
                make(&latents[0], spec.c),
                make(&latents[1], spec.n_h),
                make(&latents[2], spec.c),
            ];
            let raw = match (&spec.raw, &rna_projection) {
                (Some(r), Some(proj)) => {
                    let rows_around = |rng: &mut Rng64, latent: &Array1<f64>, k: usize| {
                        Array2::from_shape_fn((k, spec.dim), |(_, d)| {
                            latent[d] + spec.noise_std * normal(rng)
                        })
                    };
                    // stored on disk as f32
                    let patches = rows_around(&mut rng, &latents[0], r.n_patches)
                        .mapv(|v| v as f32 as f64);
                    let coords = (0..r.n_patches)
                        .map(|i| {
                            let side = (r.n_patches as f64).sqrt().ceil() as usize;
                            [(i % side) as f64, (i / side) as f64]
                        })
                        .collect();
                    let rna_latent = latents[1].dot(proj);
                    let tokens = Array2::from_shape_fn((r.n_tokens, r.d_token), |(_, d)| {
                        rna_latent[d] + spec.noise_std * normal(&mut rng)
                    });
                    let sentences = rows_around(&mut rng, &latents[2], r.n_sentences);
                    RawInputs {
                        patches: Some(patches),
                        patch_coords: Some(coords),
                        rna_tokens: Some(tokens),
                        sentences: Some(sentences),
                    }
                }
                _ => RawInputs::default(),
            };
            records.push(SampleRecord {
                sample_id: format!("s{class:03}_{j:05}"),
                label: class,
                modalities,
                raw,
            });
        }
    }
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let k = 5.min(spec.samples_per_class);
    let folds = if k >= 2 {
        stratified_folds(&labels, k, spec.seed)?
    } else {
        vec![0; labels.len()]
    };
    let folds: BTreeMap<String, usize> = records
        .iter()
        .zip(folds)
        .map(|(r, f)| (r.sample_id.clone(), f))
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            n_samples: n,
            n_classes: spec.n_classes,
            dim: spec.dim,
            c: spec.c,
            n_h: spec.n_h,
            folds,
            provenance: Provenance::Synthetic,
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            seed: 7,
            samples_per_class: 10,
            dim: 8,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        let b = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.records[0].modalities[0].global, b.records[0].modalities[0].global);
    }

    #[test]
    fn centroids_are_separated_by_the_requested_distance() {
        let spec = SyntheticSpec {
            class_separation: 6.0,
            noise_std: 0.01,
            modality_correlation: 1.0,
            samples_per_class: 400,
            dim: 16,
            c: 2,
            n_h: 2,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mean = |c: usize| {
            let rows: Vec<_> = ds.records.iter().filter(|r| r.label == c).collect();
            let mut m = Array1::<f64>::zeros(16);
            for r in &rows {
                m += &r.modalities[0].global;
            }
            m / rows.len() as f64
        };
        let (a, b) = (mean(0), mean(1));
        let d = (&a - &b).mapv(|x| x * x).sum().sqrt();
        assert!((d - 6.0).abs() < 0.5, "distance {d}");
    }

    #[test]
    fn rejects_invalid_fields() {
        let bad = SyntheticSpec {
            noise_std: 0.0,
            ..Default::default()
        };
        match generate_synthetic(&bad).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "noise_std"),
            e => panic!("unexpected {e}"),
        }
        let bad = SyntheticSpec {
            modality_correlation: 1.5,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn shapes_match_requested_geometry() {
        let spec = SyntheticSpec {
            samples_per_class: 5,
            dim: 6,
            c: 3,
            n_h: 4,
            raw: Some(RawSynth {
                n_patches: 10,
                n_tokens: 7,
                d_token: 2,
                n_sentences: 5,
            }),
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        ds.validate().unwrap();
        let r = &ds.records[0];
        assert_eq!(r.modality(Modality::Rna).local.dim(), (4, 6));
        assert_eq!(r.modality(Modality::Wsi).local.dim(), (3, 6));
        assert_eq!(r.raw.patches.as_ref().unwrap().dim(), (10, 6));
        assert_eq!(r.raw.rna_tokens.as_ref().unwrap().dim(), (7, 2));
    }
}
