//! Randomised properties of the graph and preprocessing code.

use proptest::prelude::*;

use slgtformer::data::{mirror, normalize, KeypointSequence};
use slgtformer::graph::{shortest_path_matrix, SkeletonGraph};

/// A connected graph: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        (Just(n), parents, prop::collection::vec((0..n, 0..n), 0..n))
    })
    .prop_map(|(n, parents, extra)| {
        let mut edges: Vec<(usize, usize)> = parents.into_iter().enumerate().map(|(i, p)| (p, i + 1)).collect();
        edges.extend(extra.into_iter().filter(|(a, b)| a != b));
        edges.sort_unstable();
        edges.dedup();
        (n, edges)
    })
}

proptest! {
    #[test]
    fn hop_distances_form_a_metric((n, edges) in connected_graph()) {
        let psi = shortest_path_matrix(n, &edges).unwrap();
        for i in 0..n {
            prop_assert_eq!(psi.get(i, i), 0);
            for j in 0..n {
                prop_assert_eq!(psi.get(i, j), psi.get(j, i));
                prop_assert!(i == j || psi.get(i, j) >= 1);
                for k in 0..n {
                    prop_assert!(psi.get(i, j) <= psi.get(i, k) + psi.get(k, j));
                }
            }
        }
        for &(a, b) in &edges {
            prop_assert_eq!(psi.get(a, b), 1);
        }
    }

    #[test]
    fn normalized_sequences_span_the_unit_box(
        frames in 1usize..6,
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 27 * 6),
    ) {
        let data: Vec<f64> = pts[..frames * 27].iter().flat_map(|&(x, y)| [x, y]).collect();
        let seq = KeypointSequence::new(frames, 27, 2, data, 0).unwrap();
        let out = normalize(&seq).unwrap();
        for axis in 0..2 {
            let vals: Vec<f64> = out.data.chunks_exact(2).map(|p| p[axis]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
        let again = normalize(&out).unwrap();
        for (a, b) in again.data.iter().zip(&out.data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let perm = SkeletonGraph::builtin_slgt27().mirror_permutation();
        prop_assert_eq!(mirror(&mirror(&seq, &perm), &perm).data, seq.data);
    }
}
