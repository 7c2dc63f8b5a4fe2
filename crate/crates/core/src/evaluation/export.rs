use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataio::SampleRecord;
use crate::error::{Error, Result};
use crate::fusion::Routing;
use crate::graph::{Graph, Var};
use crate::model::{Model, PassOptions};
use crate::training::Checkpoint;

/// Heatmap pixels per patch cell.
const CELL_PX: u32 = 8;

/// Interpretability values of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub label: usize,
    pub presence: [bool; 3],
    /// Patch attention weights; present only when the patch encoder ran.
    pub abmil_weights: Option<Vec<f64>>,
    /// Keep flag per local row, per modality.
    pub local_masks: [Vec<bool>; 3],
    /// Norm of the cross-modal correction added to each global feature.
    pub cma_global_cross: [f64; 3],
    /// Same for the pooled local features.
    pub cma_local_cross: [f64; 3],
    /// Experts chosen for every local row, per modality.
    pub local_experts: [Vec<Vec<usize>>; 3],
    /// Experts chosen by the final bank, one list per routed slot.
    pub final_experts: Vec<Vec<usize>>,
}

fn diff_norm(g: &Graph, a: Var, b: Var) -> f64 {
    let d = g.value(a) - g.value(b);
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn attention_record(model: &Model, record: &SampleRecord) -> Result<AttentionRecord> {
    let enc = model.prepare(record)?;
    let mut g = Graph::new();
    let p = model.store.bind(&mut g, false);
    let fwd = model.forward(&mut g, &p, &[&enc], &mut Routing::new(), PassOptions::default());
    Ok(AttentionRecord {
        sample_id: record.sample_id.clone(),
        label: record.label,
        presence: enc.presence,
        abmil_weights: fwd.abmil_weights[0].as_ref().map(|w| w.to_vec()),
        local_masks: fwd.local_masks.clone(),
        cma_global_cross: [0, 1, 2].map(|m| diff_norm(&g, fwd.cma_global[m], fwd.global_in[m])),
        cma_local_cross: [0, 1, 2].map(|m| diff_norm(&g, fwd.cma_local[m], fwd.local_pooled[m])),
        local_experts: fwd.local_experts.clone(),
        final_experts: fwd.final_experts.clone(),
    })
}

/// Red-on-black grid of patch weights, scaled to the bag maximum.
pub fn heatmap(weights: &[f64], coords: &[[f64; 2]]) -> Option<RgbImage> {
    if weights.len() != coords.len() || weights.is_empty() {
        return None;
    }
    let cell = |v: f64| v.max(0.0).round() as u32;
    let w = coords.iter().map(|c| cell(c[0])).max()? + 1;
    let h = coords.iter().map(|c| cell(c[1])).max()? + 1;
    let top = weights.iter().copied().fold(0.0, f64::max);
    let mut img = RgbImage::new(w * CELL_PX, h * CELL_PX);
    for (wt, c) in weights.iter().zip(coords) {
        let shade = if top > 0.0 { (255.0 * wt / top).round() as u8 } else { 0 };
        let (x0, y0) = (cell(c[0]) * CELL_PX, cell(c[1]) * CELL_PX);
        for dy in 0..CELL_PX {
            for dx in 0..CELL_PX {
                img.put_pixel(x0 + dx, y0 + dy, Rgb([shade, 0, 255 - shade]));
            }
        }
    }
    Some(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub records: usize,
    pub jsonl: PathBuf,
    pub images: Vec<PathBuf>,
}

/// Writes `attention.jsonl` and one PNG per sample that has patch weights
/// and coordinates into `out_dir`.
pub fn export_attention(checkpoint: &Checkpoint, records: &[SampleRecord], out_dir: &Path) -> Result<ExportSummary> {
    let model = checkpoint.model()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jsonl = out_dir.join("attention.jsonl");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&jsonl).map_err(|e| Error::io(&jsonl, e))?);
    let mut images = Vec::new();
    for record in records {
        let rec = attention_record(&model, record)?;
        writeln!(file, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&jsonl, e))?;
        let img = match (&rec.abmil_weights, &record.raw.patch_coords) {
            (Some(w), Some(c)) => heatmap(w, c),
            _ => None,
        };
        if let Some(img) = img {
            let path = out_dir.join(format!("{}.png", record.sample_id));
            img.save(&path)
                .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
            images.push(path);
        }
    }
    file.flush().map_err(|e| Error::io(&jsonl, e))?;
    Ok(ExportSummary {
        records: records.len(),
        jsonl,
        images,
    })
}

pub fn read_attention(path: &Path) -> Result<Vec<AttentionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_needs_matching_coordinates() {
        assert!(heatmap(&[0.5, 0.5], &[[0.0, 0.0]]).is_none());
        let img = heatmap(&[0.25, 0.75], &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(img.dimensions(), (2 * CELL_PX, CELL_PX));
        assert_eq!(img.get_pixel(CELL_PX, 0)[0], 255);
        assert_eq!(img.get_pixel(0, 0)[0], 85);
    }
}
