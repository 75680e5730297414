//! Weighted CART regression trees shared by the bagging and boosting learners.
//!
//! Splits maximise the weighted reduction in squared error. For 0/1 targets
//! this is proportional to the Gini decrease, so the same search serves
//! classification. Candidate features are visited in ascending index order
//! and thresholds in ascending order; only a strictly larger gain replaces
//! the incumbent, which makes ties resolve to the lowest feature index and
//! then the lowest threshold.

use nalgebra::DMatrix;
use rand::seq::index;

use crate::seed::Rng;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[(row, *feature)] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn scale_leaves(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf(v) = node {
                *v *= factor;
            }
        }
    }

    #[cfg(test)]
    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }
}

/// Row indices sorted by each feature (stable, so equal values keep row order).
pub(crate) struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let order = (0..x.ncols())
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.nrows()).collect();
                idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    /// Stop after this many splits, always expanding the best leaf first.
    pub max_splits: Option<usize>,
    /// A node is split only if its total weight exceeds this.
    pub min_split_weight: f64,
    pub min_leaf_weight: f64,
    /// Random candidate features per node; `None` means all.
    pub mtry: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Building {
    depth: usize,
    candidate: Option<Candidate>,
}

/// Grows one tree on `target` with per-row `weights` (zero = not in sample).
/// `leaf_value` receives the in-sample rows of each leaf.
pub(crate) fn grow(
    x: &DMatrix<f64>,
    sorted: &Presorted,
    target: &[f64],
    weights: &[f64],
    params: &GrowParams,
    rng: &mut Rng,
    leaf_value: &mut dyn FnMut(&[usize]) -> f64,
) -> Tree {
    let n = x.nrows();
    let d = x.ncols();
    let mut node_of: Vec<usize> = weights
        .iter()
        .map(|&w| if w > 0.0 { 0 } else { NONE })
        .collect();
    let mut building = vec![Building {
        depth: 0,
        candidate: None,
    }];
    let mut splits: Vec<Option<(usize, f64, usize, usize)>> = vec![None];

    let evaluate =
        |id: usize, depth: usize, node_of: &[usize], rng: &mut Rng| -> Option<Candidate> {
            if params.max_depth.is_some_and(|m| depth >= m) {
                return None;
            }
            let (mut w_tot, mut s_tot, mut q_tot) = (0.0, 0.0, 0.0);
            for r in 0..n {
                if node_of[r] == id {
                    w_tot += weights[r];
                    s_tot += weights[r] * target[r];
                    q_tot += weights[r] * target[r] * target[r];
                }
            }
            if w_tot <= params.min_split_weight || w_tot < 2.0 * params.min_leaf_weight {
                return None;
            }
            let features: Vec<usize> = match params.mtry {
                Some(m) if m < d => {
                    let mut f = index::sample(rng, d, m).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..d).collect(),
            };
            let base = s_tot * s_tot / w_tot;
            let tol = 1e-12 * q_tot.max(f64::MIN_POSITIVE);
            let mut best: Option<Candidate> = None;
            for &f in &features {
                let (mut wl, mut sl) = (0.0, 0.0);
                let mut prev = f64::NAN;
                for &r in &sorted.order[f] {
                    if node_of[r] != id {
                        continue;
                    }
                    let xv = x[(r, f)];
                    if wl > 0.0
                        && xv > prev
                        && wl >= params.min_leaf_weight
                        && w_tot - wl >= params.min_leaf_weight
                    {
                        let sr = s_tot - sl;
                        let gain = sl * sl / wl + sr * sr / (w_tot - wl) - base;
                        if gain > tol && best.is_none_or(|b| gain > b.gain) {
                            best = Some(Candidate {
                                feature: f,
                                threshold: 0.5 * (prev + xv),
                                gain,
                            });
                        }
                    }
                    wl += weights[r];
                    sl += weights[r] * target[r];
                    prev = xv;
                }
            }
            best
        };

    building[0].candidate = evaluate(0, 0, &node_of, rng);
    let mut n_splits = 0;
    loop {
        if params.max_splits.is_some_and(|m| n_splits >= m) {
            break;
        }
        let pick = building
            .iter()
            .enumerate()
            .filter_map(|(id, b)| b.candidate.map(|c| (id, c)))
            .fold(None::<(usize, Candidate)>, |acc, (id, c)| match acc {
                Some((_, a)) if a.gain >= c.gain => acc,
                _ => Some((id, c)),
            });
        let Some((id, cand)) = pick else { break };
        let left = building.len();
        let right = left + 1;
        let depth = building[id].depth + 1;
        building[id].candidate = None;
        building.push(Building {
            depth,
            candidate: None,
        });
        building.push(Building {
            depth,
            candidate: None,
        });
        splits[id] = Some((cand.feature, cand.threshold, left, right));
        splits.push(None);
        splits.push(None);
        for r in 0..n {
            if node_of[r] == id {
                node_of[r] = if x[(r, cand.feature)] <= cand.threshold {
                    left
                } else {
                    right
                };
            }
        }
        n_splits += 1;
        building[left].candidate = evaluate(left, depth, &node_of, rng);
        building[right].candidate = evaluate(right, depth, &node_of, rng);
    }

    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); building.len()];
    for (r, &id) in node_of.iter().enumerate() {
        if id != NONE {
            rows_of[id].push(r);
        }
    }
    let nodes = splits
        .into_iter()
        .enumerate()
        .map(|(id, s)| match s {
            Some((feature, threshold, left, right)) => Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            None => Node::Leaf(leaf_value(&rows_of[id])),
        })
        .collect();
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn params() -> GrowParams {
        GrowParams {
            max_depth: None,
            max_splits: None,
            min_split_weight: 1.0,
            min_leaf_weight: 1.0,
            mtry: None,
        }
    }

    #[test]
    fn step_function_is_recovered_exactly() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 3.0 }).collect();
        let w = vec![1.0; 10];
        let sorted = Presorted::new(&x);
        let mut mean = |rows: &[usize]| rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
        let tree = grow(&x, &sorted, &y, &w, &params(), &mut seed::rng(0), &mut mean);
        assert_eq!(tree.n_leaves(), 2);
        for (i, &yi) in y.iter().enumerate() {
            assert_eq!(tree.predict(&x, i), yi);
        }
    }

    #[test]
    fn ties_go_to_lowest_feature() {
        // two identical features: the split must use feature 0
        let x = DMatrix::from_fn(8, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..8).map(|i| if i < 4 { 0.0 } else { 1.0 }).collect();
        let w = vec![1.0; 8];
        let sorted = Presorted::new(&x);
        let mut mean = |rows: &[usize]| rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
        let p = GrowParams {
            max_splits: Some(1),
            ..params()
        };
        let tree = grow(&x, &sorted, &y, &w, &p, &mut seed::rng(0), &mut mean);
        match &tree.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 3.5);
            }
            Node::Leaf(_) => panic!("expected a split"),
        }
    }

    #[test]
    fn max_splits_limits_leaves() {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * (j + 3)) % 17) as f64);
        let y: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let w = vec![1.0; 40];
        let sorted = Presorted::new(&x);
        let mut mean = |rows: &[usize]| rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
        let p = GrowParams {
            max_splits: Some(3),
            ..params()
        };
        let tree = grow(&x, &sorted, &y, &w, &p, &mut seed::rng(0), &mut mean);
        assert_eq!(tree.n_leaves(), 4);
    }
}
