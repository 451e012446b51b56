//! Second-order regression trees grown depth-wise with exact greedy split search.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        weight: f64,
        sum_grad: f64,
        sum_hess: f64,
    },
    Split {
        feature: usize,
        /// Non-missing values `< threshold` go left.
        threshold: f64,
        missing_goes: Direction,
        gain: f64,
        sum_grad: f64,
        sum_hess: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    /// Feature value treated as missing; such rows follow the learned default direction.
    pub missing_marker: Option<f64>,
}

impl SplitParams {
    pub fn is_missing(&self, v: f64) -> bool {
        self.missing_marker == Some(v)
    }
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

/// L1 soft-thresholded Newton step: `−sign(G) max(|G| − α, 0) / (H + λ)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64, alpha: f64) -> f64 {
    let shrunk = (g.abs() - alpha).max(0.0);
    if shrunk == 0.0 {
        0.0
    } else {
        -g.signum() * shrunk / (h + lambda)
    }
}

/// A threshold strictly above `lo` and at most `hi`.
pub fn threshold_between(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

impl TreeNode {
    pub fn predict_row(&self, row: ArrayView1<f64>, missing_marker: Option<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight, .. } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    missing_goes,
                    left,
                    right,
                    ..
                } => {
                    let v = row[*feature];
                    let go_left = if missing_marker == Some(v) {
                        *missing_goes == Direction::Left
                    } else {
                        v < *threshold
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn sums(&self) -> (f64, f64) {
        match self {
            TreeNode::Leaf { sum_grad, sum_hess, .. } | TreeNode::Split { sum_grad, sum_hess, .. } => {
                (*sum_grad, *sum_hess)
            }
        }
    }

    /// Calls `f` on every split node, pre-order.
    pub fn for_each_split(&self, f: &mut impl FnMut(&TreeNode)) {
        if let TreeNode::Split { left, right, .. } = self {
            f(self);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }
}

/// Row indices of every feature, sorted by value. Built once per training run.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(features: ArrayView2<f64>) -> Self {
        let order = (0..features.ncols())
            .map(|f| {
                let col = features.column(f);
                let mut idx: Vec<u32> = (0..features.nrows() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    missing_goes: Direction,
    gain: f64,
}

struct Proto {
    g: f64,
    h: f64,
    split: Option<(Candidate, usize, usize)>,
}

struct Active {
    id: usize,
    rows: Vec<usize>,
    depth: usize,
}

fn sums(rows: &[usize], grad: &[f64], hess: &[f64]) -> (f64, f64) {
    rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]))
}

const NO_NODE: u32 = u32::MAX;

/// Grows one tree on `rows` using only features in `cols`.
///
/// Candidate thresholds sit between consecutive distinct non-missing values.
/// Missing rows are tried on both sides when present (left otherwise). Ties go
/// to the lowest feature, then the lowest threshold, then left.
pub fn build_tree(
    features: ArrayView2<f64>,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    cols: &[usize],
    params: &SplitParams,
    sorted: &SortedColumns,
) -> TreeNode {
    let mut rows = rows.to_vec();
    rows.sort_unstable();
    let mut cols = cols.to_vec();
    cols.sort_unstable();
    cols.dedup();

    let (g0, h0) = sums(&rows, grad, hess);
    let mut arena = vec![Proto { g: g0, h: h0, split: None }];
    let mut active = vec![Active { id: 0, rows, depth: 0 }];
    let mut node_of = vec![NO_NODE; features.nrows()];

    while !active.is_empty() {
        active.retain(|a| a.depth < params.max_depth && a.rows.len() >= 2);
        if active.is_empty() {
            break;
        }
        for (slot, a) in active.iter().enumerate() {
            for &r in &a.rows {
                node_of[r] = slot as u32;
            }
        }
        let best = best_splits(features, &active, &node_of, grad, hess, &cols, params, sorted);

        let mut next = Vec::new();
        for (slot, a) in active.iter().enumerate() {
            for &r in &a.rows {
                node_of[r] = NO_NODE;
            }
            let Some(c) = best[slot] else { continue };
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = a.rows.iter().partition(|&&r| {
                let v = features[[r, c.feature]];
                if params.is_missing(v) {
                    c.missing_goes == Direction::Left
                } else {
                    v < c.threshold
                }
            });
            let (gl, hl) = sums(&left_rows, grad, hess);
            let (gr, hr) = sums(&right_rows, grad, hess);
            let left_id = arena.len();
            arena.push(Proto { g: gl, h: hl, split: None });
            let right_id = arena.len();
            arena.push(Proto { g: gr, h: hr, split: None });
            let gain = split_gain(gl, hl, gr, hr, params.reg_lambda, params.gamma);
            arena[a.id].split = Some((Candidate { gain, ..c }, left_id, right_id));
            next.push(Active { id: left_id, rows: left_rows, depth: a.depth + 1 });
            next.push(Active { id: right_id, rows: right_rows, depth: a.depth + 1 });
        }
        active = next;
    }
    assemble(&arena, 0, params)
}

#[allow(clippy::too_many_arguments)]
fn best_splits(
    features: ArrayView2<f64>,
    active: &[Active],
    node_of: &[u32],
    grad: &[f64],
    hess: &[f64],
    cols: &[usize],
    params: &SplitParams,
    sorted: &SortedColumns,
) -> Vec<Option<Candidate>> {
    let k = active.len();
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let mut miss = vec![(0.0f64, 0.0f64, 0usize); k];
    let mut present = vec![(0.0f64, 0.0f64); k];
    let mut acc = vec![(0.0f64, 0.0f64); k];
    let mut last: Vec<Option<f64>> = vec![None; k];

    for &f in cols {
        for s in 0..k {
            miss[s] = (0.0, 0.0, 0);
            present[s] = (0.0, 0.0);
            acc[s] = (0.0, 0.0);
            last[s] = None;
        }
        for (s, a) in active.iter().enumerate() {
            for &r in &a.rows {
                if params.is_missing(features[[r, f]]) {
                    miss[s].0 += grad[r];
                    miss[s].1 += hess[r];
                    miss[s].2 += 1;
                } else {
                    present[s].0 += grad[r];
                    present[s].1 += hess[r];
                }
            }
        }
        for &r in &sorted.order[f] {
            let r = r as usize;
            let s = node_of[r];
            if s == NO_NODE {
                continue;
            }
            let s = s as usize;
            let v = features[[r, f]];
            if params.is_missing(v) {
                continue;
            }
            if let Some(pv) = last[s] {
                if v > pv {
                    let dirs: &[Direction] = if miss[s].2 > 0 {
                        &[Direction::Left, Direction::Right]
                    } else {
                        &[Direction::Left]
                    };
                    for &dir in dirs {
                        let (mut gl, mut hl) = acc[s];
                        let (mut gr, mut hr) = (present[s].0 - acc[s].0, present[s].1 - acc[s].1);
                        match dir {
                            Direction::Left => {
                                gl += miss[s].0;
                                hl += miss[s].1;
                            }
                            Direction::Right => {
                                gr += miss[s].0;
                                hr += miss[s].1;
                            }
                        }
                        if hl < params.min_child_weight || hr < params.min_child_weight {
                            continue;
                        }
                        let gain = split_gain(gl, hl, gr, hr, params.reg_lambda, params.gamma);
                        if gain > 0.0 && best[s].map_or(true, |b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                feature: f,
                                threshold: threshold_between(pv, v),
                                missing_goes: dir,
                                gain,
                            });
                        }
                    }
                }
            }
            acc[s].0 += grad[r];
            acc[s].1 += hess[r];
            last[s] = Some(v);
        }
    }
    best
}

fn assemble(arena: &[Proto], id: usize, params: &SplitParams) -> TreeNode {
    let p = &arena[id];
    match p.split {
        None => TreeNode::Leaf {
            weight: leaf_weight(p.g, p.h, params.reg_lambda, params.reg_alpha),
            sum_grad: p.g,
            sum_hess: p.h,
        },
        Some((c, l, r)) => TreeNode::Split {
            feature: c.feature,
            threshold: c.threshold,
            missing_goes: c.missing_goes,
            gain: c.gain,
            sum_grad: p.g,
            sum_hess: p.h,
            left: Box::new(assemble(arena, l, params)),
            right: Box::new(assemble(arena, r, params)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn params(gamma: f64, mcw: f64, depth: usize) -> SplitParams {
        SplitParams {
            max_depth: depth,
            min_child_weight: mcw,
            gamma,
            reg_lambda: 1.0,
            reg_alpha: 0.0,
            missing_marker: Some(-0.001),
        }
    }

    fn grow(x: &Array2<f64>, g: &[f64], h: &[f64], p: &SplitParams) -> TreeNode {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        let cols: Vec<usize> = (0..x.ncols()).collect();
        build_tree(x.view(), &rows, g, h, &cols, p, &SortedColumns::new(x.view()))
    }

    #[test]
    fn zero_gradients_give_zero_leaf() {
        let x = array![[1.0], [2.0], [3.0]];
        let t = grow(&x, &[0.0; 3], &[1.0; 3], &params(0.0, 0.0, 3));
        assert!(matches!(t, TreeNode::Leaf { weight, .. } if weight == 0.0));
    }

    #[test]
    fn huge_gamma_gives_single_leaf() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let g = [-1.0, -1.0, 1.0, 1.0];
        let t = grow(&x, &g, &[1.0; 4], &params(1e9, 0.0, 3));
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn four_row_fixture_by_hand() {
        // Splitting between 2 and 3 separates the gradient signs perfectly:
        // gain = ½[4/3 + 4/3 − 0/5] = 4/3 with λ = 1.
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let g = [-1.0, -1.0, 1.0, 1.0];
        let t = grow(&x, &g, &[1.0; 4], &params(0.0, 0.0, 1));
        match t {
            TreeNode::Split { threshold, gain, left, right, .. } => {
                assert_eq!(threshold, 2.5);
                assert!((gain - 4.0 / 3.0).abs() < 1e-15);
                assert!(matches!(*left, TreeNode::Leaf { weight, .. } if (weight - 2.0 / 3.0).abs() < 1e-15));
                assert!(matches!(*right, TreeNode::Leaf { weight, .. } if (weight + 2.0 / 3.0).abs() < 1e-15));
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let g = [-3.0, 1.0, 1.0, 1.0];
        let t = grow(&x, &g, &[1.0; 4], &params(0.0, 1.5, 1));
        // The isolated first row (hessian 1) is not allowed, so the split must be 2|2.
        if let TreeNode::Split { threshold, .. } = t {
            assert_eq!(threshold, 2.5);
        } else {
            panic!("expected split");
        }
    }

    #[test]
    fn missing_rows_follow_learned_direction() {
        let x = array![[-0.001], [-0.001], [1.0], [2.0], [3.0]];
        let g = [2.0, 2.0, -1.0, -1.0, 2.0];
        let t = grow(&x, &g, &[1.0; 5], &params(0.0, 0.0, 1));
        if let TreeNode::Split { threshold, missing_goes, .. } = &t {
            assert_eq!(*threshold, 2.5);
            assert_eq!(*missing_goes, Direction::Right);
        } else {
            panic!("expected split");
        }
        let row = array![-0.001];
        let leaf_right = t.predict_row(array![5.0].view(), Some(-0.001));
        assert_eq!(t.predict_row(row.view(), Some(-0.001)), leaf_right);
    }

    #[test]
    fn l1_soft_threshold() {
        assert_eq!(leaf_weight(2.0, 1.0, 1.0, 3.0), 0.0);
        assert_eq!(leaf_weight(5.0, 1.0, 1.0, 3.0), -1.0);
        assert_eq!(leaf_weight(-5.0, 3.0, 1.0, 3.0), 0.5);
    }

    #[test]
    fn threshold_between_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = threshold_between(a, b);
        assert!(a < t && t <= b);
    }
}
