use serde::{Deserialize, Serialize};

use super::{leaf_weight, soft_threshold, GbdtParams};

/// Gains at or below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Direction for a missing value. Feature rows are total, so this is
        /// never consulted; kept for the file format.
        default_left: bool,
    },
    Leaf {
        weight: f64,
    },
}

/// One regression tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.leaf_index_by(|f| x[f])
    }

    /// Like [`Tree::leaf_index`] with feature values supplied by `get`.
    pub fn leaf_index_by(&self, get: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if get(feature) < threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_by(|f| x[f])
    }

    pub fn predict_by(&self, get: impl Fn(usize) -> f64) -> f64 {
        match self.nodes[self.leaf_index_by(get)] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => unreachable!("leaf_index stops at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Checks child links and feature indices; returns a description of the
    /// first problem found.
    pub(crate) fn check(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree without nodes".into());
        }
        // Children must point forward so traversal always terminates.
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature,
                left,
                right,
                threshold,
                ..
            } = *node
            {
                if feature >= n_features {
                    return Err(format!("node {i}: feature {feature} out of range"));
                }
                if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len()
                {
                    return Err(format!("node {i}: bad child link"));
                }
                if threshold.is_nan() {
                    return Err(format!("node {i}: NaN threshold"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn score(g: f64, h: f64, params: &GbdtParams) -> f64 {
    let t = soft_threshold(g, params.reg_alpha);
    t * t / (h + params.reg_lambda)
}

/// Scans one feature in ascending value order and updates `best`.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    feature: usize,
    values: &[f64],
    sorted_rows: impl Iterator<Item = usize>,
    g: &[f64],
    h: &[f64],
    totals: (f64, f64),
    params: &GbdtParams,
    best: &mut Option<SplitCandidate>,
) {
    let (g_tot, h_tot) = totals;
    let parent = score(g_tot, h_tot, params);
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut prev: Option<f64> = None;
    for r in sorted_rows {
        let v = values[r];
        if let Some(p) = prev {
            if v > p {
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                if hl >= params.min_child_weight && hr >= params.min_child_weight {
                    let gain = 0.5 * (score(gl, hl, params) + score(gr, hr, params) - parent);
                    if gain > MIN_GAIN && best.is_none_or(|b| gain > b.gain) {
                        // Adjacent floats can round the midpoint down onto `p`.
                        let mid = p + (v - p) / 2.0;
                        *best = Some(SplitCandidate {
                            feature,
                            threshold: if mid > p { mid } else { v },
                            gain,
                        });
                    }
                }
            }
        }
        gl += g[r];
        hl += h[r];
        prev = Some(v);
    }
}

/// Exact greedy split search over `rows`.
///
/// `columns[j][r]` is feature `j` of row `r`. Thresholds are midpoints between
/// consecutive distinct values; ties go to the lower feature index, then the
/// lower threshold.
pub fn best_split(
    columns: &[Vec<f64>],
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    params: &GbdtParams,
) -> Option<SplitCandidate> {
    let totals = rows
        .iter()
        .fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    let mut best = None;
    let mut order = rows.to_vec();
    for (j, col) in columns.iter().enumerate() {
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        scan_feature(
            j,
            col,
            order.iter().copied(),
            g,
            h,
            totals,
            params,
            &mut best,
        );
    }
    best
}

/// Training-time view of the data: columns plus each column's row order.
pub(crate) struct Presorted<'a> {
    pub columns: &'a [Vec<f64>],
    order: Vec<Vec<u32>>,
}

impl<'a> Presorted<'a> {
    pub fn new(columns: &'a [Vec<f64>]) -> Self {
        let order = columns
            .iter()
            .map(|col| {
                let mut o: Vec<u32> = (0..col.len() as u32).collect();
                o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                o
            })
            .collect();
        Self { columns, order }
    }
}

/// Grows one tree on `rows`, with leaf weights already
/// scaled by the learning rate.
pub(crate) fn grow(
    data: &Presorted<'_>,
    rows: Vec<usize>,
    g: &[f64],
    h: &[f64],
    params: &GbdtParams,
) -> Tree {
    let n = data.columns.first().map_or(0, Vec::len);
    let mut node_of = vec![usize::MAX; n];
    let mut tree = Tree { nodes: Vec::new() };
    grow_node(data, rows, 0, g, h, params, &mut node_of, &mut tree);
    tree
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    data: &Presorted<'_>,
    rows: Vec<usize>,
    depth: usize,
    g: &[f64],
    h: &[f64],
    params: &GbdtParams,
    node_of: &mut [usize],
    tree: &mut Tree,
) -> usize {
    let id = tree.nodes.len();
    let totals = rows
        .iter()
        .fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    tree.nodes.push(Node::Leaf {
        weight: params.learning_rate * leaf_weight(totals.0, totals.1, params),
    });
    if depth >= params.max_depth || rows.len() < 2 {
        return id;
    }
    for &r in &rows {
        node_of[r] = id;
    }
    let mut best = None;
    for (j, col) in data.columns.iter().enumerate() {
        let members = data.order[j]
            .iter()
            .map(|&r| r as usize)
            .filter(|&r| node_of[r] == id);
        scan_feature(j, col, members, g, h, totals, params, &mut best);
    }
    let Some(split) = best else {
        return id;
    };
    let col = &data.columns[split.feature];
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&r| col[r] < split.threshold);
    let left = grow_node(data, left_rows, depth + 1, g, h, params, node_of, tree);
    let right = grow_node(data, right_rows, depth + 1, g, h, params, node_of, tree);
    tree.nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
        default_left: true,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::logistic_grad_hess;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grads(labels: &[f64], logit: f64) -> (Vec<f64>, Vec<f64>) {
        labels.iter().map(|&y| logistic_grad_hess(logit, y)).unzip()
    }

    /// Closed-form gain of splitting `rows` at `thr` on `col`.
    fn brute_gain(col: &[f64], thr: f64, g: &[f64], h: &[f64], p: &GbdtParams) -> Option<f64> {
        let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..col.len() {
            if col[i] < thr {
                gl += g[i];
                hl += h[i];
            } else {
                gr += g[i];
                hr += h[i];
            }
        }
        if hl < p.min_child_weight || hr < p.min_child_weight {
            return None;
        }
        let s = |g: f64, h: f64| soft_threshold(g, p.reg_alpha).powi(2) / (h + p.reg_lambda);
        Some(0.5 * (s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr)))
    }

    #[test]
    fn four_point_example_matches_brute_force() {
        let params = GbdtParams {
            min_child_weight: 0.0,
            ..GbdtParams::default()
        };
        let col = vec![1.0, 2.0, 3.0, 4.0];
        let (g, h) = grads(&[0.0, 0.0, 1.0, 1.0], 0.0);
        let brute = [1.5, 2.5, 3.5]
            .into_iter()
            .max_by(|a, b| {
                let ga = brute_gain(&col, *a, &g, &h, &params).unwrap();
                let gb = brute_gain(&col, *b, &g, &h, &params).unwrap();
                ga.total_cmp(&gb)
            })
            .unwrap();
        let s = best_split(&[col], &[0, 1, 2, 3], &g, &h, &params).unwrap();
        assert_eq!(brute, 2.5);
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn identical_labels_do_not_split() {
        let params = GbdtParams {
            min_child_weight: 0.0,
            ..GbdtParams::default()
        };
        let col: Vec<f64> = (0..20).map(f64::from).collect();
        let (g, h) = grads(&[1.0; 20], 0.3);
        let rows: Vec<usize> = (0..20).collect();
        assert!(best_split(&[col], &rows, &g, &h, &params).is_none());
    }

    #[test]
    fn duplicate_columns_prefer_lower_index() {
        let params = GbdtParams {
            min_child_weight: 0.0,
            ..GbdtParams::default()
        };
        let col = vec![5.0, 1.0, 4.0, 2.0, 8.0, 7.0];
        let (g, h) = grads(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], 0.0);
        let s = best_split(&[col.clone(), col], &[0, 1, 2, 3, 4, 5], &g, &h, &params).unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let params = GbdtParams::default();
        let col = vec![1.0, 2.0, 3.0, 4.0];
        let (g, h) = grads(&[0.0, 0.0, 1.0, 1.0], 0.0);
        // Each half has hessian 0.5 < 3.
        assert!(best_split(&[col], &[0, 1, 2, 3], &g, &h, &params).is_none());
    }

    #[test]
    fn monotone_transform_keeps_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = GbdtParams {
            min_child_weight: 0.5,
            ..GbdtParams::default()
        };
        for _ in 0..50 {
            let n = 40;
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<f64> = col
                .iter()
                .map(|&v| f64::from(v + rng.random_range(-1.0..1.0) > 0.0))
                .collect();
            let (g, h) = grads(&labels, 0.0);
            let rows: Vec<usize> = (0..n).collect();
            let exp: Vec<f64> = col.iter().map(|v| v.exp()).collect();
            let a = best_split(std::slice::from_ref(&col), &rows, &g, &h, &params);
            let b = best_split(std::slice::from_ref(&exp), &rows, &g, &h, &params);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    let pa: Vec<bool> = col.iter().map(|&v| v < a.threshold).collect();
                    let pb: Vec<bool> = exp.iter().map(|&v| v < b.threshold).collect();
                    assert_eq!(pa, pb);
                    assert!((a.gain - b.gain).abs() < 1e-12);
                }
                _ => panic!("split existence changed"),
            }
        }
    }

    #[test]
    fn check_rejects_backward_links() {
        let t = Tree {
            nodes: vec![Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 0,
                default_left: true,
            }],
        };
        assert!(t.check(1).is_err());
        assert!(Tree::leaf(0.0).check(0).is_ok());
    }
}
