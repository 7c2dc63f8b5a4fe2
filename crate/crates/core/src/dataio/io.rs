//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/samples/<sample_id>.json
//! <dir>/samples/<sample_id>.wsi.bin   (optional raw patches, LE f32, row-major)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use serde_json::{json, Map, Value};

use super::{Dataset, DatasetManifest, Modality, ModalityData, RawInputs, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::stream;

/// Raw WSI bags larger than this are subsampled on ingest.
pub const MAX_PATCHES: usize = 2048;

/// Result of [`ingest`]: the dataset and any normalization warnings.
#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn parse_err(file: &Path, field: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn rows_to_json(m: &Array2<f64>) -> Value {
    Value::Array(m.rows().into_iter().map(|r| json!(r.to_vec())).collect())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string(v)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` in the directory layout read by [`ingest`].
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let samples = dir.join("samples");
    fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
    write_json(&dir.join("manifest.json"), &serde_json::to_value(&dataset.manifest)?)?;
    for rec in &dataset.records {
        let mut obj = Map::new();
        obj.insert("sample_id".into(), json!(rec.sample_id));
        obj.insert("label".into(), json!(rec.label));
        for m in Modality::ALL {
            let d = rec.modality(m);
            obj.insert(
                m.key().into(),
                json!({
                    "present": d.present,
                    "global": d.global.to_vec(),
                    "local": rows_to_json(&d.local),
                }),
            );
        }
        if !rec.raw.is_empty() {
            let mut raw = Map::new();
            if let Some(p) = &rec.raw.patches {
                raw.insert("wsi_n_patch".into(), json!(p.nrows()));
                let mut bytes = Vec::with_capacity(p.len() * 4);
                for v in p.iter() {
                    bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                let bin = samples.join(format!("{}.wsi.bin", rec.sample_id));
                fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
            }
            if let Some(c) = &rec.raw.patch_coords {
                raw.insert("patch_coords".into(), json!(c));
            }
            if let Some(t) = &rec.raw.rna_tokens {
                raw.insert("rna_tokens".into(), rows_to_json(t));
            }
            if let Some(s) = &rec.raw.sentences {
                raw.insert("sentences".into(), rows_to_json(s));
            }
            obj.insert("raw".into(), Value::Object(raw));
        }
        write_json(&samples.join(format!("{}.json", rec.sample_id)), &Value::Object(obj))?;
    }
    Ok(())
}

fn vec_field(file: &Path, field: &str, v: Option<&Value>) -> Result<Vec<f64>> {
    let arr = v
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(file, field, "expected an array of numbers"))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| parse_err(file, field, format!("non-numeric entry `{x}`")))
        })
        .collect()
}

fn matrix_field(
    file: &Path,
    field: &str,
    v: Option<&Value>,
    sample_id: &str,
    cols: Option<usize>,
) -> Result<Array2<f64>> {
    let rows = v
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err(file, field, "expected an array of rows"))?;
    let mut data = Vec::new();
    let mut width = cols;
    for (i, row) in rows.iter().enumerate() {
        let r = vec_field(file, &format!("{field}[{i}]"), Some(row))?;
        match width {
            Some(w) if w != r.len() => {
                return Err(Error::Dimension {
                    sample: Some(sample_id.to_string()),
                    reason: format!("{field}[{i}] has {} values, expected {w}", r.len()),
                })
            }
            None => width = Some(r.len()),
            _ => {}
        }
        data.extend(r);
    }
    let w = width.unwrap_or(0);
    Array2::from_shape_vec((rows.len(), w), data)
        .map_err(|e| parse_err(file, field, e.to_string()))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, "<document>", e.to_string()))
}

fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let v = read_json(path)?;
    for field in ["n_samples", "n_classes", "D", "C", "N_h", "folds", "provenance"] {
        if v.get(field).is_none() {
            return Err(parse_err(path, field, "missing"));
        }
    }
    serde_json::from_value(v).map_err(|e| parse_err(path, "<manifest>", e.to_string()))
}

fn parse_sample(
    file: &Path,
    dir: &Path,
    manifest: &DatasetManifest,
    sample_id: &str,
    warnings: &mut Vec<String>,
) -> Result<SampleRecord> {
    let v = read_json(file)?;
    let label = v
        .get("label")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err(file, "label", "expected a non-negative integer"))?
        as usize;
    let mut modalities: Vec<ModalityData> = Vec::with_capacity(3);
    for m in Modality::ALL {
        let key = m.key();
        let block = v
            .get(key)
            .ok_or_else(|| parse_err(file, key, "missing modality block"))?;
        let present = block
            .get("present")
            .and_then(Value::as_bool)
            .ok_or_else(|| parse_err(file, &format!("{key}.present"), "expected a boolean"))?;
        let global = vec_field(file, &format!("{key}.global"), block.get("global"))?;
        if global.len() != manifest.dim {
            return Err(Error::Dimension {
                sample: Some(sample_id.to_string()),
                reason: format!(
                    "{key}.global has {} values, manifest D = {}",
                    global.len(),
                    manifest.dim
                ),
            });
        }
        let local = matrix_field(
            file,
            &format!("{key}.local"),
            block.get("local"),
            sample_id,
            Some(manifest.dim),
        )?;
        let rows = manifest.local_rows(m);
        if local.nrows() != rows {
            return Err(Error::Dimension {
                sample: Some(sample_id.to_string()),
                reason: format!("{key}.local has {} rows, expected {rows}", local.nrows()),
            });
        }
        let mut data = ModalityData {
            present,
            global: Array1::from(global),
            local,
        };
        if !present && !data.is_zero() {
            let msg = format!("sample `{sample_id}`: {key} is absent but carries nonzero values; zero-filled");
            log::warn!("{msg}");
            warnings.push(msg);
            data.zero_fill();
        }
        modalities.push(data);
    }
    let mut raw = RawInputs::default();
    if let Some(rv) = v.get("raw") {
        if let Some(n_patch) = rv.get("wsi_n_patch") {
            let n_patch = n_patch
                .as_u64()
                .ok_or_else(|| parse_err(file, "raw.wsi_n_patch", "expected an integer"))?
                as usize;
            let bin = dir.join("samples").join(format!("{sample_id}.wsi.bin"));
            let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
            if bytes.len() != n_patch * manifest.dim * 4 {
                return Err(Error::Dimension {
                    sample: Some(sample_id.to_string()),
                    reason: format!(
                        "{} holds {} bytes, expected {} x {} f32",
                        bin.display(),
                        bytes.len(),
                        n_patch,
                        manifest.dim
                    ),
                });
            }
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            raw.patches = Some(
                Array2::from_shape_vec((n_patch, manifest.dim), data)
                    .map_err(|e| parse_err(file, "raw.wsi_n_patch", e.to_string()))?,
            );
        }
        if let Some(c) = rv.get("patch_coords") {
            let coords: Vec<[f64; 2]> = serde_json::from_value(c.clone())
                .map_err(|e| parse_err(file, "raw.patch_coords", e.to_string()))?;
            raw.patch_coords = Some(coords);
        }
        if let Some(t) = rv.get("rna_tokens") {
            raw.rna_tokens = Some(matrix_field(file, "raw.rna_tokens", Some(t), sample_id, None)?);
        }
        if let Some(s) = rv.get("sentences") {
            raw.sentences = Some(matrix_field(
                file,
                "raw.sentences",
                Some(s),
                sample_id,
                Some(manifest.dim),
            )?);
        }
        if let (Some(p), Some(c)) = (&raw.patches, &raw.patch_coords) {
            if p.nrows() != c.len() {
                return Err(parse_err(file, "raw.patch_coords", "one coordinate per patch required"));
            }
        }
        subsample_patches(&mut raw, sample_id);
    }
    let modalities: [ModalityData; 3] = modalities.try_into().expect("three modalities");
    Ok(SampleRecord {
        sample_id: sample_id.to_string(),
        label,
        modalities,
        raw,
    })
}

/// Uniform subsample without replacement down to [`MAX_PATCHES`] rows,
/// keeping the original row order.
fn subsample_patches(raw: &mut RawInputs, sample_id: &str) {
    let Some(p) = &raw.patches else { return };
    if p.nrows() <= MAX_PATCHES {
        return;
    }
    let mut rng = stream(0, &format!("patch_subsample/{sample_id}"));
    let mut idx = sample(&mut rng, p.nrows(), MAX_PATCHES).into_vec();
    idx.sort_unstable();
    raw.patches = Some(p.select(ndarray::Axis(0), &idx));
    if let Some(c) = &raw.patch_coords {
        raw.patch_coords = Some(idx.iter().map(|&i| c[i]).collect());
    }
}

/// Reads and validates a dataset directory. Records are ordered by sample id.
pub fn ingest(dir: &Path) -> Result<Ingested> {
    let manifest_path = dir.join("manifest.json");
    let manifest = parse_manifest(&manifest_path)?;
    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(manifest.n_samples);
    for sample_id in manifest.folds.keys() {
        let file: PathBuf = dir.join("samples").join(format!("{sample_id}.json"));
        let rec = parse_sample(&file, dir, &manifest, sample_id, &mut warnings)?;
        rec.validate(&manifest)?;
        records.push(rec);
    }
    if let Some((id, fold)) = manifest.folds.iter().find(|(_, f)| **f >= 5) {
        return Err(parse_err(
            &manifest_path,
            "folds",
            format!("sample `{id}` has fold {fold}, expected 0..5"),
        ));
    }
    let dataset = Dataset { manifest, records };
    dataset.validate()?;
    Ok(Ingested { dataset, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};

    fn small() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            samples_per_class: 5,
            dim: 5,
            c: 3,
            n_h: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_records() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = ingest(dir.path()).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.dataset, ds);
    }

    #[test]
    fn dimension_mismatch_names_sample() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let mut manifest = ds.manifest.clone();
        manifest.dim = 7;
        fs::write(
            dir.path().join("manifest.json"),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        match ingest(dir.path()).unwrap_err() {
            Error::Dimension { sample, .. } => assert_eq!(sample.as_deref(), Some(ds.records[0].sample_id.as_str())),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn absent_with_values_is_zero_filled_with_warning() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let id = &ds.records[2].sample_id;
        let path = dir.path().join("samples").join(format!("{id}.json"));
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["rna"]["present"] = json!(false);
        fs::write(&path, v.to_string()).unwrap();
        let back = ingest(dir.path()).unwrap();
        assert_eq!(back.warnings.len(), 1);
        let rec = &back.dataset.records[2];
        assert!(!rec.modality(Modality::Rna).present);
        assert!(rec.modality(Modality::Rna).is_zero());
    }

    #[test]
    fn schema_violation_names_file_and_field() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let id = &ds.records[0].sample_id;
        let path = dir.path().join("samples").join(format!("{id}.json"));
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["wsi"]["present"] = json!("yes");
        fs::write(&path, v.to_string()).unwrap();
        match ingest(dir.path()).unwrap_err() {
            Error::Parse { file, field, .. } => {
                assert_eq!(file, path);
                assert_eq!(field, "wsi.present");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn large_bags_are_subsampled() {
        let mut raw = RawInputs {
            patches: Some(Array2::from_shape_fn((MAX_PATCHES + 100, 2), |(i, _)| i as f64)),
            ..Default::default()
        };
        subsample_patches(&mut raw, "x");
        let p = raw.patches.unwrap();
        assert_eq!(p.nrows(), MAX_PATCHES);
        let col: Vec<f64> = p.column(0).to_vec();
        assert!(col.windows(2).all(|w| w[0] < w[1]), "distinct rows, original order");
    }
}
