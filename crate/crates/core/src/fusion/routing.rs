/// Discrete choices made during a forward pass (top-k experts, selected local
/// rows, prototype components), in call order.
///
/// A recording can be replayed so that a second pass at a perturbed input
/// makes exactly the same choices, which is what finite-difference checks of
/// piecewise-smooth paths need.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Routing {
    groups: Vec<Vec<Vec<usize>>>,
    cursor: usize,
    replay: bool,
}

impl Routing {
    pub fn new() -> Self {
        Self::default()
    }

    /// A routing that repeats the choices of `recorded`.
    pub fn replay_of(recorded: &Routing) -> Self {
        Self {
            groups: recorded.groups.clone(),
            cursor: 0,
            replay: true,
        }
    }

    pub fn is_replay(&self) -> bool {
        self.replay
    }

    pub fn groups(&self) -> &[Vec<Vec<usize>>] {
        &self.groups
    }

    /// Returns the next recorded group when replaying, otherwise computes,
    /// records and returns it.
    pub fn choose(&mut self, compute: impl FnOnce() -> Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        if self.replay {
            let g = self
                .groups
                .get(self.cursor)
                .cloned()
                .expect("replayed forward pass made more choices than the recording");
            self.cursor += 1;
            g
        } else {
            let g = compute();
            self.groups.push(g.clone());
            g
        }
    }
}

/// Indices of the `k` largest scores, largest first; ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
