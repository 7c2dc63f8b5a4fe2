use rand::seq::index::sample;
use rand::Rng;

use super::{Modality, SampleRecord};
use crate::config::MaskStrategy;
use crate::error::{Error, Result};
use crate::nn::stream;

const MAX_RESAMPLES: usize = 1000;

/// Number of samples that lose each modality.
fn victim_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Masks exactly `round(fraction * n)` samples per modality.
///
/// Masked modalities are zero-filled and flagged absent. No sample ever loses
/// all three modalities. Modalities that are already absent are never counted
/// as fresh victims.
pub fn apply_mask(
    records: &[SampleRecord],
    fraction: f64,
    seed: u64,
    strategy: MaskStrategy,
) -> Result<Vec<SampleRecord>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("fraction", format!("must lie in [0, 1], got {fraction}")));
    }
    let mut out = records.to_vec();
    let n = out.len();
    let k = victim_count(fraction, n);
    if k == 0 {
        return Ok(out);
    }
    let mut rng = stream(seed, "apply_mask");
    let absent0: Vec<usize> = out.iter().map(|r| 3 - r.n_present()).collect();
    let victims: [Vec<usize>; 3] = match strategy {
        MaskStrategy::Independent => {
            let mut attempt = 0;
            loop {
                let mut draw: [Vec<usize>; 3] = Default::default();
                let mut feasible = true;
                for m in Modality::ALL {
                    let candidates: Vec<usize> =
                        (0..n).filter(|&i| out[i].modality(m).present).collect();
                    if candidates.len() < k {
                        feasible = false;
                        break;
                    }
                    draw[m.index()] = sample(&mut rng, candidates.len(), k)
                        .into_iter()
                        .map(|j| candidates[j])
                        .collect();
                }
                if feasible {
                    let mut lost = absent0.clone();
                    for v in &draw {
                        for &i in v {
                            lost[i] += 1;
                        }
                    }
                    if lost.iter().all(|&l| l < 3) {
                        break draw;
                    }
                }
                attempt += 1;
                if attempt >= MAX_RESAMPLES {
                    return Err(Error::Masking(format!(
                        "could not mask {k} of {n} samples per modality without removing every modality from some sample after {MAX_RESAMPLES} draws"
                    )));
                }
            }
        }
        MaskStrategy::Spread => {
            let mut lost = absent0.clone();
            let mut draw: [Vec<usize>; 3] = Default::default();
            for m in Modality::ALL {
                let mut candidates: Vec<(usize, u64, usize)> = (0..n)
                    .filter(|&i| out[i].modality(m).present && lost[i] < 2)
                    .map(|i| (lost[i], rng.random::<u64>(), i))
                    .collect();
                if candidates.len() < k {
                    return Err(Error::Masking(format!(
                        "only {} samples can lose {} while keeping one modality, need {k}",
                        candidates.len(),
                        m.key()
                    )));
                }
                candidates.sort_unstable();
                for &(_, _, i) in candidates.iter().take(k) {
                    lost[i] += 1;
                    draw[m.index()].push(i);
                }
            }
            draw
        }
    };
    for m in Modality::ALL {
        for &i in &victims[m.index()] {
            out[i].mask_modality(m);
        }
    }
    Ok(out)
}

/// Keeps only complete records.
pub fn drop_incomplete(records: &[SampleRecord]) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.is_complete()).cloned().collect()
}
