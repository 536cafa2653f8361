//! Mask-optimization explainer for the graph model.
//!
//! Learns an edge mask and a per-block per-column feature mask whose masked
//! prediction stays close to the original similarity while size and entropy
//! penalties push unimportant entries toward zero. The threat model is
//! black box, so gradients are estimated with central finite differences on
//! the mask logits.

use super::ExplainError;
use crate::asm::FunctionUnit;
use crate::models::{embed_graph, Embedding, Model, ModelKind};

#[derive(Clone, Debug)]
pub struct GnnSettings {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_size: f64,
    pub lambda_entropy: f64,
    /// Finite-difference half step on the logits.
    pub fd_step: f64,
}

impl Default for GnnSettings {
    fn default() -> Self {
        GnnSettings {
            steps: 100,
            learning_rate: 0.1,
            lambda_size: 0.005,
            lambda_entropy: 0.05,
            fd_step: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GnnExplanation {
    /// Mask values in (0,1), one row of 8 per block.
    pub feature_mask: Vec<[f64; 8]>,
    /// One mask value per directed CFG edge.
    pub edge_mask: Vec<f64>,
    /// Loss before each update step, plus the final loss.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn entropy(m: f64) -> f64 {
    let m = m.clamp(1e-12, 1.0 - 1e-12);
    -(m * m.ln() + (1.0 - m) * (1.0 - m).ln())
}

struct MaskProblem<'a> {
    model: &'a Model,
    rows: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    target: Embedding,
    original_sim: f64,
    settings: &'a GnnSettings,
    n_blocks: usize,
}

impl MaskProblem<'_> {
    /// Logit layout: feature cells first (block-major), then edges.
    fn loss(&self, logits: &[f64]) -> f64 {
        let n_cells = self.n_blocks * 8;
        let feature_mask: Vec<Vec<f64>> = (0..self.n_blocks)
            .map(|b| (0..8).map(|c| sigmoid(logits[b * 8 + c])).collect())
            .collect();
        let edge_mask: Vec<f64> = logits[n_cells..].iter().map(|&l| sigmoid(l)).collect();
        let emb = embed_graph(
            self.model,
            &self.rows,
            &self.edges,
            Some(&edge_mask),
            Some(&feature_mask),
        );
        let sim = emb.cosine(&self.target);
        let fidelity = (sim - self.original_sim).powi(2);
        let mut size = 0.0;
        let mut ent = 0.0;
        for mask in logits.iter().map(|&l| sigmoid(l)) {
            size += mask;
            ent += entropy(mask);
        }
        fidelity + self.settings.lambda_size * size + self.settings.lambda_entropy * ent
    }
}

/// Optimize edge and feature masks explaining the similarity of `f` to
/// `target` under a graph model.
pub fn gnn_explain(
    model: &Model,
    f: &FunctionUnit,
    target: &FunctionUnit,
    settings: &GnnSettings,
) -> Result<GnnExplanation, ExplainError> {
    if model.kind != ModelKind::Graph {
        return Err(ExplainError::GranularityMismatch {
            expected: "graph",
            got: model.kind.name(),
        });
    }
    let view = model.feature_view(f);
    let rows: Vec<Vec<f64>> = view.values.chunks(8).map(|c| c.to_vec()).collect();
    let target_emb = model.embed(target);
    let original_sim = model.embed(f).cosine(&target_emb);
    let n_blocks = view.block_count;
    let problem = MaskProblem {
        model,
        rows,
        edges: view.edges.clone(),
        target: target_emb,
        original_sim,
        settings,
        n_blocks,
    };

    let n_logits = n_blocks * 8 + view.edges.len();
    let mut logits = vec![0.0f64; n_logits]; // masks start at 0.5
    let mut loss_history = Vec::with_capacity(settings.steps + 1);
    let mut grad = vec![0.0f64; n_logits];
    for _ in 0..settings.steps {
        loss_history.push(problem.loss(&logits));
        for i in 0..n_logits {
            let saved = logits[i];
            logits[i] = saved + settings.fd_step;
            let up = problem.loss(&logits);
            logits[i] = saved - settings.fd_step;
            let down = problem.loss(&logits);
            logits[i] = saved;
            grad[i] = (up - down) / (2.0 * settings.fd_step);
        }
        for (l, g) in logits.iter_mut().zip(&grad) {
            *l -= settings.learning_rate * g;
        }
    }
    let final_loss = problem.loss(&logits);
    loss_history.push(final_loss);

    let feature_mask: Vec<[f64; 8]> = (0..n_blocks)
        .map(|b| {
            let mut row = [0.0f64; 8];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = sigmoid(logits[b * 8 + c]);
            }
            row
        })
        .collect();
    let edge_mask: Vec<f64> = logits[n_blocks * 8..].iter().map(|&l| sigmoid(l)).collect();
    Ok(GnnExplanation {
        feature_mask,
        edge_mask,
        loss_history,
        final_loss,
    })
}
