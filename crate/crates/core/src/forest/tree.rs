use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Node of a fitted regression tree. Samples with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf { value: f64, n: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { value, n } => Some((value, n)),
            _ => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

pub(crate) struct TreeParams {
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    sse: f64,
    /// Rows (in `rows` order after sorting by the feature) going left.
    n_left: usize,
}

/// Best split of `rows` on `feature`: lowest child SSE, then lowest
/// threshold. Returns the rows sorted by that feature alongside.
fn best_on_feature(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<(Candidate, Vec<usize>)> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
    let n = sorted.len();
    let (tot, tot2) = sorted.iter().fold((0.0, 0.0), |(s, s2), &i| (s + y[i], s2 + y[i] * y[i]));
    let mut best: Option<Candidate> = None;
    let (mut ls, mut ls2) = (0.0, 0.0);
    for k in 0..n - 1 {
        let yi = y[sorted[k]];
        ls += yi;
        ls2 += yi * yi;
        let nl = k + 1;
        let nr = n - nl;
        let a = x[sorted[k]][feature];
        let b = x[sorted[k + 1]][feature];
        if nl < min_leaf || nr < min_leaf || !(a < b) {
            continue;
        }
        let rs = tot - ls;
        let rs2 = tot2 - ls2;
        let sse = (ls2 - ls * ls / nl as f64) + (rs2 - rs * rs / nr as f64);
        let mid = a + (b - a) / 2.0;
        let threshold = if mid < b { mid } else { a };
        if best.as_ref().is_none_or(|c| sse < c.sse) {
            best = Some(Candidate { feature, threshold, sse, n_left: nl });
        }
    }
    best.map(|c| (c, sorted))
}

/// Grows one CART tree on `rows` (which may repeat under bootstrap).
pub(crate) fn grow<R: Rng>(x: &[Vec<f64>], y: &[f64], rows: Vec<usize>, p: &TreeParams, rng: &mut R) -> RegressionTree {
    let n_features = x.first().map_or(0, |r| r.len());
    let mut nodes = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { value: 0.0, n: 0 });
    let mut order: Vec<usize> = (0..n_features).collect();
    while let Some((slot, rows, depth)) = stack.pop() {
        let n = rows.len();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
        let capped = p.max_depth.is_some_and(|d| depth >= d);
        if pure || capped || n < 2 * p.min_leaf {
            nodes[slot] = Node::Leaf { value: if pure { y[rows[0]] } else { mean }, n };
            continue;
        }
        order.shuffle(rng);
        let mut best: Option<(Candidate, Vec<usize>)> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= p.mtry && best.is_some() {
                break;
            }
            if let Some((c, sorted)) = best_on_feature(x, y, &rows, f, p.min_leaf) {
                let better = match &best {
                    None => true,
                    Some((b, _)) => {
                        c.sse < b.sse
                            || (c.sse == b.sse
                                && (c.feature < b.feature || (c.feature == b.feature && c.threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some((c, sorted));
                }
            }
        }
        match best {
            None => nodes[slot] = Node::Leaf { value: mean, n },
            Some((c, sorted)) => {
                let left_rows = sorted[..c.n_left].to_vec();
                let right_rows = sorted[c.n_left..].to_vec();
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0, n: 0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0, n: 0 });
                nodes[slot] = Node::Split { feature: c.feature, threshold: c.threshold, left, right };
                stack.push((right, right_rows, depth + 1));
                stack.push((left, left_rows, depth + 1));
            }
        }
    }
    RegressionTree { nodes }
}
