use ndarray::Array2;
use proptest::prelude::*;

use latkd::gbt::{build_tree, SortedColumns, SplitParams};

mod common;
use common::{from_tree, oracle_tree, OracleParams, MARKER};

/// Small integer features with some missing cells, dyadic gradients and
/// hessians, so every sum the tree builder forms is exact.
fn fixture() -> impl Strategy<Value = (Array2<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..=40, 1usize..=4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop_oneof![1 => Just(MARKER), 6 => (0i32..6).prop_map(f64::from)], n * d),
            prop::collection::vec((-8i32..=8).prop_map(|k| f64::from(k) / 8.0), n),
            prop::collection::vec((1i32..=16).prop_map(|k| f64::from(k) / 16.0), n),
        )
            .prop_map(move |(x, g, h)| (Array2::from_shape_vec((n, d), x).unwrap(), g, h))
    })
}

fn params() -> impl Strategy<Value = OracleParams> {
    (1usize..=3, prop::sample::select(vec![0.0, 0.25, 1.0]), prop::sample::select(vec![0.0, 0.125]),
     prop::sample::select(vec![0.5, 1.0, 2.0]), prop::sample::select(vec![0.0, 0.25]))
        .prop_map(|(depth, mcw, gamma, lambda, alpha)| OracleParams { depth, mcw, gamma, lambda, alpha })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tree_matches_brute_force_greedy_search((x, g, h) in fixture(), p in params()) {
        let sp = SplitParams {
            max_depth: p.depth,
            min_child_weight: p.mcw,
            gamma: p.gamma,
            reg_lambda: p.lambda,
            reg_alpha: p.alpha,
            missing_marker: Some(MARKER),
        };
        let rows: Vec<usize> = (0..x.nrows()).collect();
        let cols: Vec<usize> = (0..x.ncols()).collect();
        let tree = build_tree(x.view(), &rows, &g, &h, &cols, &sp, &SortedColumns::new(x.view()));
        prop_assert_eq!(from_tree(&tree), oracle_tree(&x, &rows, &g, &h, 0, &p));
    }

    #[test]
    fn row_subset_matches_oracle_on_the_subset((x, g, h) in fixture(), p in params(), keep in prop::collection::vec(any::<bool>(), 40)) {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&r| keep[r]).collect();
        prop_assume!(!rows.is_empty());
        let sp = SplitParams {
            max_depth: p.depth,
            min_child_weight: p.mcw,
            gamma: p.gamma,
            reg_lambda: p.lambda,
            reg_alpha: p.alpha,
            missing_marker: Some(MARKER),
        };
        let cols: Vec<usize> = (0..x.ncols()).collect();
        let tree = build_tree(x.view(), &rows, &g, &h, &cols, &sp, &SortedColumns::new(x.view()));
        prop_assert_eq!(from_tree(&tree), oracle_tree(&x, &rows, &g, &h, 0, &p));
    }
}

#[test]
fn all_missing_feature_never_splits() {
    let x = Array2::from_elem((6, 1), MARKER);
    let g = vec![1.0, -1.0, 1.0, -1.0, 0.5, -0.5];
    let h = vec![1.0; 6];
    let p = OracleParams { depth: 2, mcw: 0.0, gamma: 0.0, lambda: 1.0, alpha: 0.0 };
    let sp = SplitParams {
        max_depth: 2,
        min_child_weight: 0.0,
        gamma: 0.0,
        reg_lambda: 1.0,
        reg_alpha: 0.0,
        missing_marker: Some(MARKER),
    };
    let rows: Vec<usize> = (0..6).collect();
    let tree = build_tree(x.view(), &rows, &g, &h, &[0], &sp, &SortedColumns::new(x.view()));
    assert_eq!(from_tree(&tree), oracle_tree(&x, &rows, &g, &h, 0, &p));
    assert_eq!(tree.n_leaves(), 1);
}
