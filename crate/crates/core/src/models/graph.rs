//! structure2vec-style graph embedding over ACFG feature rows.
//!
//! Messages flow along both directions of every edge; an optional per-edge
//! weight vector and per-cell feature mask support the mask-optimization
//! explainer.

use super::{Embedding, Model};

fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Embed a feature matrix (`rows[v]` is the 8-column tuple of block `v`)
/// over `edges`. `edge_weights` scales each directed edge's message in both
/// directions; `feature_mask` scales feature cells elementwise.
pub fn embed_graph(
    model: &Model,
    rows: &[Vec<f64>],
    edges: &[(usize, usize)],
    edge_weights: Option<&[f64]>,
    feature_mask: Option<&[Vec<f64>]>,
) -> Embedding {
    let n = rows.len();
    let dim = model.dim;
    let (w_input, w_neighbor, w_output) = model.graph_weights();

    let inputs: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(v, row)| {
            let masked: Vec<f64> = match feature_mask {
                Some(mask) => row.iter().zip(&mask[v]).map(|(a, m)| a * m).collect(),
                None => row.clone(),
            };
            matvec(w_input, &masked)
        })
        .collect();

    let mut mu = vec![vec![0.0f64; dim]; n];
    for _ in 0..model.rounds {
        // Neighbor sums over pred ∪ succ, one term per directed edge end.
        let mut neighbor_sum = vec![vec![0.0f64; dim]; n];
        for (ei, &(s, t)) in edges.iter().enumerate() {
            let w = edge_weights.map_or(1.0, |m| m[ei]);
            for d in 0..dim {
                neighbor_sum[t][d] += w * mu[s][d];
                neighbor_sum[s][d] += w * mu[t][d];
            }
        }
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mixed = matvec(w_neighbor, &neighbor_sum[v]);
            let node: Vec<f64> = inputs[v]
                .iter()
                .zip(&mixed)
                .map(|(a, b)| (a + b).tanh())
                .collect();
            next.push(node);
        }
        mu = next;
    }

    let mut pooled = vec![0.0f64; dim];
    for node in &mu {
        for (acc, x) in pooled.iter_mut().zip(node) {
            *acc += x;
        }
    }
    Embedding::normalized(matvec(w_output, &pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_function;
    use crate::models::ModelKind;

    #[test]
    fn block_relabeling_leaves_embedding_unchanged() {
        let model = Model::new(ModelKind::Graph, 9);
        let rows = vec![
            vec![1.0, 0.0, 2.0, 0.0, 4.0, 1.0, 2.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 3.0, 0.0, 1.0, 0.5],
            vec![0.0, 0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0],
        ];
        let edges = vec![(0, 1), (0, 2), (1, 2)];
        let base = embed_graph(&model, &rows, &edges, None, None);

        // Permutation (0 1 2) -> (2 0 1).
        let perm = [2usize, 0, 1];
        let permuted_rows: Vec<Vec<f64>> = (0..3).map(|v| rows[perm[v]].clone()).collect();
        let inverse = |v: usize| perm.iter().position(|&p| p == v).unwrap();
        let permuted_edges: Vec<(usize, usize)> =
            edges.iter().map(|&(s, t)| (inverse(s), inverse(t))).collect();
        let permuted = embed_graph(&model, &permuted_rows, &permuted_edges, None, None);
        for (a, b) in base.values.iter().zip(&permuted.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_edge_weights_equal_removed_edges() {
        let model = Model::new(ModelKind::Graph, 4);
        let rows = vec![
            vec![0.0, 1.0, 1.0, 0.0, 3.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0],
        ];
        let with_zeroed = embed_graph(&model, &rows, &[(0, 1)], Some(&[0.0]), None);
        let without = embed_graph(&model, &rows, &[], None, None);
        assert_eq!(with_zeroed, without);
    }

    #[test]
    fn unit_feature_mask_is_identity() {
        let f = parse_function("fn f:\nentry:\n  add r1, 1\n  cmp r1, 2\n  jne done\nmid:\n  call g\ndone:\n  ret\n").unwrap();
        let model = Model::new(ModelKind::Graph, 4);
        let view = model.feature_view(&f);
        let rows: Vec<Vec<f64>> = view.values.chunks(8).map(|c| c.to_vec()).collect();
        let ones = vec![vec![1.0; 8]; rows.len()];
        let masked = embed_graph(&model, &rows, &view.edges, None, Some(&ones));
        let plain = embed_graph(&model, &rows, &view.edges, None, None);
        assert_eq!(masked, plain);
    }
}
