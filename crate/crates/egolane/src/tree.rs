//! Depth-limited regression trees for gradient boosting.
//!
//! Trees are grown level by level over presorted feature columns, so one
//! pass per feature per level finds every node's best split. Splits maximize
//! squared-error reduction of the gradient targets; leaf values are Newton
//! steps (sum of gradients over sum of hessians). All tie-breaking is fixed:
//! features are scanned in index order and thresholds in ascending value
//! order, so fitting is deterministic.

use serde::{Deserialize, Serialize};

/// A node of a fitted tree. Serialized untagged: split nodes carry
/// `feature/threshold/left/right`, leaves carry `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn value(&self, features: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if features[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Column-major training matrix with per-column sort order, built once per
/// boosting run.
pub struct ColumnMatrix {
    pub n_rows: usize,
    pub columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
}

impl ColumnMatrix {
    pub fn from_rows(rows: &[&[f64]]) -> ColumnMatrix {
        let n_rows = rows.len();
        let n_cols = if n_rows == 0 { 0 } else { rows[0].len() };
        let mut columns = vec![Vec::with_capacity(n_rows); n_cols];
        for row in rows {
            debug_assert_eq!(row.len(), n_cols);
            for (c, &v) in row.iter().enumerate() {
                columns[c].push(v);
            }
        }
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].partial_cmp(&col[b as usize]).unwrap());
                idx
            })
            .collect();
        ColumnMatrix { n_rows, columns, sorted }
    }
}

const MIN_GAIN: f64 = 1e-12;
const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct ScanState {
    last_value: f64,
    started: bool,
    left_weight: f64,
    left_sum: f64,
}

/// Fit one tree to gradients with Newton leaf values. Also returns the leaf
/// value assigned to every row, so the caller can update scores without
/// re-walking the tree.
///
/// `gradients` and `hessians` are weighted sums per row; `weights` carries
/// each row's multiplicity. Duplicating every row therefore scales all
/// split statistics by exactly two and fits an identical tree.
pub fn fit_tree(
    matrix: &ColumnMatrix,
    gradients: &[f64],
    hessians: &[f64],
    weights: &[f64],
    max_depth: usize,
    min_samples_leaf: f64,
) -> (RegressionTree, Vec<f64>) {
    let n = matrix.n_rows;
    assert!(n > 0);
    let mut assignment: Vec<u32> = vec![0; n];
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    // (node id, weight, sum of gradients) for nodes open at the current level
    let mut open: Vec<(u32, f64, f64)> = vec![(0, weights.iter().sum(), gradients.iter().sum())];

    for _depth in 0..max_depth {
        if open.is_empty() {
            break;
        }
        let max_node = nodes.len();
        let mut best: Vec<Option<SplitCandidate>> = vec![None; max_node];
        let mut node_stats: Vec<Option<(f64, f64)>> = vec![None; max_node];
        for &(id, weight, sum) in &open {
            node_stats[id as usize] = Some((weight, sum));
        }

        for feature in 0..matrix.columns.len() {
            let col = &matrix.columns[feature];
            let mut scans: Vec<ScanState> = vec![ScanState::default(); max_node];
            for &row in &matrix.sorted[feature] {
                let node = assignment[row as usize] as usize;
                let Some(Some((total_weight, total_sum))) = node_stats.get(node).map(|s| *s) else {
                    continue;
                };
                let value = col[row as usize];
                let scan = &mut scans[node];
                if scan.started && value > scan.last_value {
                    let left_w = scan.left_weight;
                    let right_w = total_weight - left_w;
                    if left_w >= min_samples_leaf && right_w >= min_samples_leaf {
                        let left_sum = scan.left_sum;
                        let right_sum = total_sum - left_sum;
                        let gain = left_sum * left_sum / left_w
                            + right_sum * right_sum / right_w
                            - total_sum * total_sum / total_weight;
                        let better = match best[node] {
                            None => gain > MIN_GAIN,
                            Some(b) => gain > b.gain,
                        };
                        if better {
                            best[node] = Some(SplitCandidate {
                                gain,
                                feature,
                                threshold: 0.5 * (scan.last_value + value),
                            });
                        }
                    }
                }
                scan.left_weight += weights[row as usize];
                scan.left_sum += gradients[row as usize];
                scan.last_value = value;
                scan.started = true;
            }
        }

        let mut splits: Vec<Option<(usize, f64, u32, u32)>> = vec![None; max_node];
        for &(id, _, _) in &open {
            if let Some(candidate) = best[id as usize] {
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes.push(TreeNode::Leaf { value: 0.0 });
                nodes[id as usize] = TreeNode::Split {
                    feature: candidate.feature,
                    threshold: candidate.threshold,
                    left: left as usize,
                    right: right as usize,
                };
                splits[id as usize] = Some((candidate.feature, candidate.threshold, left, right));
            }
        }

        let mut child_stats: Vec<(f64, f64)> = vec![(0.0, 0.0); nodes.len()];
        for row in 0..n {
            let node = assignment[row] as usize;
            if let Some(Some((feature, threshold, left, right))) = splits.get(node) {
                let child = if matrix.columns[*feature][row] <= *threshold { *left } else { *right };
                assignment[row] = child;
                let stats = &mut child_stats[child as usize];
                stats.0 += weights[row];
                stats.1 += gradients[row];
            }
        }

        let mut next_open = Vec::new();
        for &(id, _, _) in &open {
            if let Some((_, _, left, right)) = splits[id as usize] {
                for child in [left, right] {
                    let (weight, sum) = child_stats[child as usize];
                    next_open.push((child, weight, sum));
                }
            }
        }
        open = next_open;
    }

    // Newton leaf values over the final assignment.
    let mut leaf_g = vec![0.0f64; nodes.len()];
    let mut leaf_h = vec![0.0f64; nodes.len()];
    for row in 0..n {
        let node = assignment[row] as usize;
        debug_assert!(matches!(nodes[node], TreeNode::Leaf { .. }));
        leaf_g[node] += gradients[row];
        leaf_h[node] += hessians[row];
    }
    for (idx, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            *value = leaf_g[idx] / leaf_h[idx].max(HESSIAN_FLOOR);
        }
    }
    let tree = RegressionTree { nodes };
    let row_values = assignment
        .iter()
        .map(|&node| match tree.nodes[node as usize] {
            TreeNode::Leaf { value } => value,
            _ => unreachable!("rows always end on leaves"),
        })
        .collect();
    (tree, row_values)
}
