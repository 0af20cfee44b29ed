//! Alignment kernels against exhaustive oracles, plus structural properties.

mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepalign_core::align::{align_sequences, drop_dtw, dtw, percentile_drop_cost, CostSpec};
use stepalign_core::{EmbeddingSequence, MatchMode, Matrix, SequenceKind};

const MODES: [MatchMode; 2] = [MatchMode::OneToOne, MatchMode::ManyToOne];

#[test]
fn drop_dtw_equals_exhaustive_search() {
    for (s, mode) in MODES.into_iter().enumerate() {
        let worst = oracle_max_error(mode, 250, 100 + s as u64);
        assert!(worst <= 1e-9, "{mode:?}: {worst:e}");
    }
}

/// Minimum over every monotone path from the top-left to the bottom-right.
fn path_oracle(c: &Matrix, i: usize, j: usize) -> f64 {
    let here = c[(i, j)];
    if i + 1 == c.rows() && j + 1 == c.cols() {
        return here;
    }
    let mut best = f64::INFINITY;
    if i + 1 < c.rows() && j + 1 < c.cols() {
        best = best.min(path_oracle(c, i + 1, j + 1));
    }
    if i + 1 < c.rows() {
        best = best.min(path_oracle(c, i + 1, j));
    }
    if j + 1 < c.cols() {
        best = best.min(path_oracle(c, i, j + 1));
    }
    here + best
}

#[test]
fn dtw_equals_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let c = random(4, 5, &mut rng);
        let got = dtw(&c).unwrap();
        assert!((got.total_cost() - path_oracle(&c, 0, 0)).abs() < 1e-9);
        assert_eq!(got.mode(), MatchMode::ManyToMany);
    }
}

#[test]
fn reported_cost_matches_traceback() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let spec = random_spec(&mut rng);
        for mode in MODES {
            let corr = drop_dtw(&spec, mode).unwrap();
            assert_eq!(spec.cost_of(&corr), corr.total_cost());
            assert_eq!(corr.num_matches() + corr.dropped_cols().len(), spec.cols());
        }
    }
}

#[test]
fn drop_count_is_monotone_in_drop_cost() {
    for mode in MODES {
        assert_eq!(monotonicity_violations(mode, 100, 9), 0, "{mode:?}");
    }
}

#[test]
fn power_of_two_scaling_keeps_the_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let spec = random_spec(&mut rng);
        for mode in MODES {
            let base = drop_dtw(&spec, mode).unwrap();
            for s in [0.25, 2.0, 8.0] {
                let costs = spec.match_cost.scale(s);
                let scaled = CostSpec::new(
                    costs,
                    spec.row_drop_cost.map(|c| c * s),
                    spec.col_drop_cost.map(|c| c * s),
                );
                let got = drop_dtw(&scaled, mode).unwrap();
                assert_eq!(got.pairs(), base.pairs());
                assert_eq!(got.total_cost(), base.total_cost() * s);
            }
        }
    }
}

#[test]
fn embedding_scale_does_not_change_the_alignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let rows = EmbeddingSequence::new(random(4, 6, &mut rng), SequenceKind::Slots).unwrap();
        let cols = EmbeddingSequence::new(random(6, 6, &mut rng), SequenceKind::Video).unwrap();
        for mode in MODES {
            let base = align_sequences(&rows, &cols, mode, 0.8).unwrap();
            for s in [0.37, 5.0] {
                let got = align_sequences(&rows.scaled(s).unwrap(), &cols.scaled(s).unwrap(), mode, 0.8).unwrap();
                assert!((got.total_cost() - base.total_cost()).abs() < 1e-12);
                assert_eq!(got.match_matrix(), base.match_matrix());
            }
        }
    }
}

proptest! {
    #[test]
    fn matches_never_cross(
        k in 1usize..6,
        n in 1usize..8,
        vals in proptest::collection::vec(-1.0f64..1.0, 48),
        p in 0.1f64..1.0,
        many in any::<bool>(),
    ) {
        let costs = Matrix::from_fn(k, n, |i, j| vals[i * n + j]);
        let drop = percentile_drop_cost(&costs, p).unwrap();
        let mode = if many { MatchMode::ManyToOne } else { MatchMode::OneToOne };
        let corr = drop_dtw(&CostSpec::symmetric(costs, drop), mode).unwrap();
        let pairs = corr.pairs();
        for w in pairs.windows(2) {
            let ((i0, j0), (i1, j1)) = (w[0], w[1]);
            prop_assert!(i0 <= i1 && j0 < j1);
            if !many {
                prop_assert!(i0 < i1);
            }
        }
    }

    #[test]
    fn dropping_is_free_below_every_match(
        k in 1usize..5,
        n in 1usize..6,
        vals in proptest::collection::vec(-1.0f64..1.0, 30),
    ) {
        // matching m columns costs at least -m, dropping them and the row -(m + 1)
        let costs = Matrix::from_fn(k, n, |i, j| vals[i * n + j]);
        let corr = drop_dtw(&CostSpec::symmetric(costs, -1.0), MatchMode::ManyToOne).unwrap();
        prop_assert_eq!(corr.num_matches(), 0);
    }
}
