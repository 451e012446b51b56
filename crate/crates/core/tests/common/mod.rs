//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;

use latkd::gbt::{Direction, TreeNode};

pub const MARKER: f64 = -0.001;

#[derive(Debug, PartialEq)]
pub enum Oracle {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        missing_left: bool,
        gain: f64,
        left: Box<Oracle>,
        right: Box<Oracle>,
    },
}

pub fn from_tree(t: &TreeNode) -> Oracle {
    match t {
        TreeNode::Leaf { weight, .. } => Oracle::Leaf(*weight),
        TreeNode::Split {
            feature,
            threshold,
            missing_goes,
            gain,
            left,
            right,
            ..
        } => Oracle::Split {
            feature: *feature,
            threshold: *threshold,
            missing_left: *missing_goes == Direction::Left,
            gain: *gain,
            left: Box::new(from_tree(left)),
            right: Box::new(from_tree(right)),
        },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleParams {
    pub depth: usize,
    pub mcw: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
}

pub fn oracle_leaf(g: f64, h: f64, p: &OracleParams) -> f64 {
    if g > p.alpha {
        -(g - p.alpha) / (h + p.lambda)
    } else if g < -p.alpha {
        -(g + p.alpha) / (h + p.lambda)
    } else {
        0.0
    }
}

pub fn oracle_gain(gl: f64, hl: f64, gr: f64, hr: f64, p: &OracleParams) -> f64 {
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - g * g / (h + p.lambda)) - p.gamma
}

/// Greedy tree by brute force: every feature, every midpoint between distinct
/// present values, every missing direction, scored from scratch.
pub fn oracle_tree(x: &Array2<f64>, rows: &[usize], g: &[f64], h: &[f64], depth: usize, p: &OracleParams) -> Oracle {
    let total = |rs: &[usize]| rs.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]));
    let (gs, hs) = total(rows);
    if depth >= p.depth || rows.len() < 2 {
        return Oracle::Leaf(oracle_leaf(gs, hs, p));
    }
    let mut best: Option<(f64, usize, f64, bool, Vec<usize>, Vec<usize>)> = None;
    for f in 0..x.ncols() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).filter(|&v| v != MARKER).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let has_missing = rows.iter().any(|&r| x[[r, f]] == MARKER);
        for w in values.windows(2) {
            let threshold = (w[0] + w[1]) / 2.0;
            let dirs: &[bool] = if has_missing { &[true, false] } else { &[true] };
            for &missing_left in dirs {
                let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
                    let v = x[[r, f]];
                    if v == MARKER {
                        missing_left
                    } else {
                        v < threshold
                    }
                });
                let (gl, hl) = total(&left);
                let (gr, hr) = total(&right);
                if hl < p.mcw || hr < p.mcw {
                    continue;
                }
                let gain = oracle_gain(gl, hl, gr, hr, p);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, threshold, missing_left, left, right));
                }
            }
        }
    }
    match best {
        None => Oracle::Leaf(oracle_leaf(gs, hs, p)),
        Some((gain, feature, threshold, missing_left, left, right)) => Oracle::Split {
            feature,
            threshold,
            missing_left,
            gain,
            left: Box::new(oracle_tree(x, &left, g, h, depth + 1, p)),
            right: Box::new(oracle_tree(x, &right, g, h, depth + 1, p)),
        },
    }
}

/// Every distinct score is a threshold; precision is taken at each one and
/// weighted by the recall gained there.
pub fn oracle_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    ap
}
