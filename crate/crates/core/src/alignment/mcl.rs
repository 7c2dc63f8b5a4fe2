use ndarray::{Array1, Array2, ArrayView1};

use super::ClassGmms;
use crate::error::{Error, Result};
use crate::fusion::Routing;
use crate::graph::{Graph, Var};
use crate::mixture::argmax;

/// Index of the most probable component of each class for `x`; `None` for
/// classes without a mixture.
pub fn prototype_components(x: ArrayView1<f64>, gmms: &ClassGmms) -> Vec<Option<usize>> {
    gmms.classes
        .iter()
        .map(|g| g.as_ref().map(|g| argmax(g.log_joint(x).view())))
        .collect()
}

fn uninitialized() -> Error {
    Error::State("class mixtures are not initialized; alignment losses need the warm-up epochs to finish first".into())
}

/// Multi-prototype contrastive loss over a batch, averaged over the rows
/// whose class has a mixture. For row `i` the logits are `x_i · q_c / tau`,
/// where `q_c` is the mean of class `c`'s most probable component. Prototypes
/// are constants; the component choices go through `routing`.
pub fn mcl_rows(
    g: &mut Graph,
    x: Var,
    labels: &[usize],
    gmms: &ClassGmms,
    tau: f64,
    routing: &mut Routing,
) -> Result<Var> {
    let available: Vec<usize> = (0..gmms.n_classes()).filter(|&c| gmms.get(c).is_some()).collect();
    if available.is_empty() {
        return Err(uninitialized());
    }
    let (b, d) = g.shape(x);
    let chosen = {
        let xv = g.value(x);
        routing.choose(|| {
            (0..b)
                .map(|i| {
                    prototype_components(xv.row(i), gmms)
                        .into_iter()
                        .flatten()
                        .collect()
                })
                .collect()
        })
    };
    let k = available.len();
    let mut protos = Array2::zeros((b * k, d));
    for i in 0..b {
        for (slot, &c) in available.iter().enumerate() {
            let gmm = gmms.get(c).expect("available");
            protos.row_mut(i * k + slot).assign(&gmm.means.row(chosen[i][slot]));
        }
    }
    let rows: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let protos = g.constant(protos);
    let xr = g.gather_rows(x, rows);
    let dots = g.row_dot(xr, protos);
    let logits = g.reshape(dots, (b, k));
    let logits = g.scale(logits, 1.0 / tau);
    let (keep, targets): (Vec<usize>, Vec<usize>) = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| available.iter().position(|c| c == l).map(|t| (i, t)))
        .unzip();
    if keep.is_empty() {
        return Ok(g.constant(Array2::zeros((1, 1))));
    }
    let logits = g.gather_rows(logits, keep);
    Ok(g.cross_entropy(logits, &targets))
}

/// Loss of a single feature vector with class `label`.
pub fn mcl_loss(x: &Array1<f64>, label: usize, gmms: Option<&ClassGmms>, tau: f64) -> Result<f64> {
    let gmms = gmms.ok_or_else(uninitialized)?;
    if label >= gmms.n_classes() {
        return Err(Error::Label {
            label,
            n_classes: gmms.n_classes(),
        });
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone().insert_axis(ndarray::Axis(0)));
    let l = mcl_rows(&mut g, xv, &[label], gmms, tau, &mut Routing::new())?;
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::DiagGmm;
    use ndarray::array;

    fn gmms(protos: &[[f64; 2]]) -> ClassGmms {
        ClassGmms {
            classes: protos
                .iter()
                .map(|p| Some(DiagGmm::from_means(array![[p[0], p[1]]])))
                .collect(),
        }
    }

    #[test]
    fn symmetric_logits_give_log_two() {
        let g = gmms(&[[1.0, 0.0], [0.0, 1.0]]);
        let l = mcl_loss(&array![0.5, 0.5], 0, Some(&g), 0.1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn three_class_hand_value() {
        // x · q / tau = (2, 0, 0)
        let g = gmms(&[[0.2, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let l = mcl_loss(&array![1.0, 0.0], 0, Some(&g), 0.1).unwrap();
        let e2 = 2f64.exp();
        assert!((l + (e2 / (e2 + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn uninitialized_is_a_state_error() {
        assert!(matches!(mcl_loss(&array![1.0], 0, None, 0.1), Err(Error::State(_))));
    }
}
