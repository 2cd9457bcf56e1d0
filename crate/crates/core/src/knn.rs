//! Exact k-nearest-neighbour coverage graph between an in-distribution set
//! and an OOD set.
//!
//! For every OOD point `j` the graph stores its `k` nearest in-distribution
//! points under Euclidean distance, sorted by ascending distance. Distance ties
//! are broken by lower in-distribution index. Membership in a neighbour list is
//! what counts as coverage, so a coincident pair (distance 0) is covered.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// In-distribution row index.
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KnnOptions {
    /// Scale every vector to unit L2 norm before measuring distances.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n_in: usize,
    n_ood: usize,
    k: usize,
    edges: Vec<Edge>,
    covered_counts: Vec<u32>,
}

impl KnnGraph {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_ood(&self) -> usize {
        self.n_ood
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `k` neighbours of OOD point `j`, nearest first.
    pub fn neighbors(&self, j: usize) -> &[Edge] {
        &self.edges[j * self.k..(j + 1) * self.k]
    }

    /// All edges, grouped by OOD point.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Per in-distribution point, how many OOD points list it as a neighbour.
    pub fn covered_counts(&self) -> &[u32] {
        &self.covered_counts
    }

    /// Debug dump, one `j,i,rank,distance` line per edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,i,rank,distance\n");
        for j in 0..self.n_ood {
            for (rank, e) in self.neighbors(j).iter().enumerate() {
                let _ = writeln!(out, "{j},{},{rank},{}", e.index, e.distance);
            }
        }
        out
    }
}

pub fn build_knn_graph(in_set: &EmbeddingSet, ood_set: &EmbeddingSet, k: usize) -> Result<KnnGraph> {
    build_knn_graph_with(in_set, ood_set, k, KnnOptions::default())
}

pub fn build_knn_graph_with(
    in_set: &EmbeddingSet,
    ood_set: &EmbeddingSet,
    k: usize,
    opts: KnnOptions,
) -> Result<KnnGraph> {
    if in_set.is_empty() || ood_set.is_empty() {
        return Err(Error::arg("both sets must be nonempty"));
    }
    if in_set.dim() != ood_set.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: in-distribution d = {}, OOD d = {}",
            in_set.dim(),
            ood_set.dim()
        )));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let n_in = in_set.len();
    if k > n_in {
        return Err(Error::arg(format!("k = {k} exceeds in-distribution size {n_in}")));
    }
    let dim = in_set.dim();
    let reference = widen(in_set, opts.normalize);
    let queries = widen(ood_set, opts.normalize);

    let edges: Vec<Edge> = queries
        .par_chunks_exact(dim)
        .flat_map_iter(|q| nearest(&reference, dim, q, k))
        .collect();

    let mut covered_counts = vec![0u32; n_in];
    for e in &edges {
        covered_counts[e.index] += 1;
    }
    Ok(KnnGraph {
        n_in,
        n_ood: ood_set.len(),
        k,
        edges,
        covered_counts,
    })
}

fn widen(set: &EmbeddingSet, normalize: bool) -> Vec<f64> {
    let mut out: Vec<f64> = set.data().iter().map(|&v| v as f64).collect();
    if normalize {
        for row in out.chunks_exact_mut(set.dim()) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    out
}

/// Euclidean distance, accumulated coordinate by coordinate in `f64`.
pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn by_distance_then_index(a: &Edge, b: &Edge) -> std::cmp::Ordering {
    a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index))
}

fn nearest(reference: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<Edge> {
    let mut all: Vec<Edge> = reference
        .chunks_exact(dim)
        .enumerate()
        .map(|(index, r)| Edge {
            index,
            distance: l2(r, q),
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_unstable_by(by_distance_then_index);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[[f64; 2]]) -> EmbeddingSet {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        EmbeddingSet::from_rows("s", 1, &rows, None, None).unwrap()
    }

    #[test]
    fn tiny_configuration() {
        let g = build_knn_graph(&set(&[[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]), &set(&[[0.4, 0.0]]), 2).unwrap();
        let nb = g.neighbors(0);
        assert_eq!(nb[0].index, 0);
        assert_eq!(nb[1].index, 1);
        // The expected values are the f32-rounded inputs measured in f64.
        assert!((nb[0].distance - 0.4).abs() < 1e-7);
        assert!((nb[1].distance - 0.6).abs() < 1e-7);
        assert_eq!(g.covered_counts(), &[1, 1, 0]);
    }

    #[test]
    fn k_equal_n_covers_everything() {
        let g = build_knn_graph(
            &set(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]),
            &set(&[[0.0, 1.0], [9.0, 9.0]]),
            3,
        )
        .unwrap();
        assert_eq!(g.covered_counts(), &[2, 2, 2]);
    }

    #[test]
    fn coincident_point_is_a_neighbor() {
        let g = build_knn_graph(&set(&[[1.0, 1.0], [3.0, 3.0]]), &set(&[[3.0, 3.0]]), 1).unwrap();
        assert_eq!(
            g.neighbors(0)[0],
            Edge {
                index: 1,
                distance: 0.0
            }
        );
        assert_eq!(g.covered_counts(), &[0, 1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let g = build_knn_graph(&set(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), &set(&[[0.0, 0.0]]), 2).unwrap();
        let idx: Vec<usize> = g.neighbors(0).iter().map(|e| e.index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn argument_errors() {
        let a = set(&[[0.0, 0.0]]);
        assert!(matches!(build_knn_graph(&a, &a, 2), Err(Error::Argument(_))));
        let b = EmbeddingSet::new("b", 3, 1, vec![0.0; 3], None, None).unwrap();
        assert!(matches!(build_knn_graph(&a, &b, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn normalization_projects_to_sphere() {
        let g = build_knn_graph_with(
            &set(&[[10.0, 0.0], [0.0, 1.0]]),
            &set(&[[0.5, 0.0]]),
            1,
            KnnOptions { normalize: true },
        )
        .unwrap();
        assert_eq!(
            g.neighbors(0)[0],
            Edge {
                index: 0,
                distance: 0.0
            }
        );
    }

    #[test]
    fn csv_dump() {
        let g = build_knn_graph(&set(&[[0.0, 0.0], [3.0, 4.0]]), &set(&[[0.0, 0.0]]), 2).unwrap();
        assert_eq!(g.to_csv(), "j,i,rank,distance\n0,0,0,0\n0,1,1,5\n");
    }
}
