//! Explainers: per-feature weights and the per-instruction importance
//! scores derived from them.

pub mod gnn;
pub mod lime;

pub use gnn::{gnn_explain, GnnExplanation, GnnSettings};
pub use lime::{explain_sequence, lime_dataset, lime_fit, FeatureWeights, LimeConfig, LimeSample};

use crate::asm::FunctionUnit;
use crate::features::{
    classify_instruction, PrimaryClass, COL_N_ARI, COL_N_CALL, COL_N_CON, COL_N_INSTR, COL_N_STR,
    COL_N_TRANS,
};
use crate::models::{FeatureView, ModelKind, Provenance};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ExplainError {
    #[error("expected {expected} feature granularity, got {got}")]
    GranularityMismatch { expected: &'static str, got: &'static str },
    #[error("feature mask shape {got} does not match the function's {expected} blocks")]
    MaskShape { expected: usize, got: usize },
    #[error("weighted least squares system is singular (try a larger sample count or ridge)")]
    Degenerate,
    #[error("weight vector length {got} does not match the view length {expected}")]
    WeightShape { expected: usize, got: usize },
}

/// Per-instruction importance with a stable descending ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionImportance {
    pub scores: Vec<f64>,
}

impl InstructionImportance {
    pub fn new(scores: Vec<f64>) -> InstructionImportance {
        InstructionImportance { scores }
    }

    /// Indices by descending score; ties broken by instruction index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// jTrans-style aggregation: per-instruction score is the sum of the
/// absolute token weights. The intercept does not participate.
pub fn map_tokens_to_instructions(
    weights: &FeatureWeights,
    view: &FeatureView,
) -> Result<InstructionImportance, ExplainError> {
    if view.kind != ModelKind::SeqToken {
        return Err(ExplainError::GranularityMismatch {
            expected: "token",
            got: view.kind.name(),
        });
    }
    if weights.weights.len() != view.len() {
        return Err(ExplainError::WeightShape {
            expected: view.len(),
            got: weights.weights.len(),
        });
    }
    let mut scores = vec![0.0f64; view.instr_count];
    for (idx, w) in weights.weights.iter().enumerate() {
        if let Provenance::Token { instr, .. } = view.provenance[idx] {
            scores[instr] += w.abs();
        }
    }
    Ok(InstructionImportance::new(scores))
}

/// SAFE-style direct mapping: one feature per instruction, score = |weight|.
pub fn map_instructions_direct(
    weights: &FeatureWeights,
    view: &FeatureView,
) -> Result<InstructionImportance, ExplainError> {
    if view.kind != ModelKind::SeqInstr {
        return Err(ExplainError::GranularityMismatch {
            expected: "instruction",
            got: view.kind.name(),
        });
    }
    if weights.weights.len() != view.len() {
        return Err(ExplainError::WeightShape {
            expected: view.len(),
            got: weights.weights.len(),
        });
    }
    let mut scores = vec![0.0f64; view.instr_count];
    for (idx, w) in weights.weights.iter().enumerate() {
        if let Provenance::Instruction(i) = view.provenance[idx] {
            scores[i] = w.abs();
        }
    }
    Ok(InstructionImportance::new(scores))
}

/// Instruction-type vocabulary mapping for the graph explainer: each
/// instruction takes the maximum mask weight over the feature columns its
/// categories apply to; `n_instr` applies to every instruction.
pub fn type_vocab_map(
    feature_mask: &[[f64; 8]],
    f: &FunctionUnit,
) -> Result<InstructionImportance, ExplainError> {
    if feature_mask.len() != f.blocks.len() {
        return Err(ExplainError::MaskShape {
            expected: f.blocks.len(),
            got: feature_mask.len(),
        });
    }
    let mut scores = vec![0.0f64; f.instruction_count()];
    for (global, block, _, instr) in f.instructions() {
        let mask = &feature_mask[block];
        let cats = classify_instruction(instr);
        let mut score = mask[COL_N_INSTR];
        let mut consider = |col: usize| {
            if mask[col] > score {
                score = mask[col];
            }
        };
        match cats.primary {
            PrimaryClass::Arithmetic => consider(COL_N_ARI),
            PrimaryClass::Transfer => consider(COL_N_TRANS),
            PrimaryClass::Call => consider(COL_N_CALL),
            PrimaryClass::Control | PrimaryClass::Other => {}
        }
        if cats.constant {
            consider(COL_N_CON);
        }
        if cats.string {
            consider(COL_N_STR);
        }
        scores[global] = score;
    }
    Ok(InstructionImportance::new(scores))
}

/// Top-`n` instructions by importance; terminators are excluded so that
/// perturbations cannot orphan CFG edges.
pub fn select_top_instructions(
    importance: &InstructionImportance,
    n: usize,
    f: &FunctionUnit,
) -> Vec<usize> {
    debug_assert!(n >= 1);
    let terminators: std::collections::BTreeSet<usize> =
        f.terminator_indices().into_iter().collect();
    importance
        .ranking()
        .into_iter()
        .filter(|i| !terminators.contains(i))
        .take(n)
        .collect()
}
