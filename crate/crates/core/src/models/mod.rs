//! Deterministic surrogate similarity models.
//!
//! Two families behind one interface: sequence models (token or instruction
//! feature granularity) built from a seeded hash-indexed token table, and a
//! graph model running structure2vec over the ACFG. Weights are seeded, not
//! trained; identical `(kind, seed, dim, rounds)` always yields bitwise
//! identical parameters, which keeps every downstream test reproducible.

mod graph;

pub use graph::embed_graph;

use crate::asm::FunctionUnit;
use crate::cfg::Cfg;
use crate::features::{self, COL_N_INSTR, COL_N_OFFSPRING, COL_BETWEENNESS};
use crate::hash::fnv1a_str;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Rows in the token embedding table.
pub const TOKEN_TABLE_SIZE: usize = 4096;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_ROUNDS: usize = 3;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ModelKind {
    /// One feature per normalized token (jTrans-style granularity).
    SeqToken,
    /// One feature per instruction (SAFE-style granularity).
    SeqInstr,
    /// ACFG eight-tuples through structure2vec (Gemini-style).
    Graph,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SeqToken => "seq-token",
            ModelKind::SeqInstr => "seq-instr",
            ModelKind::Graph => "graph",
        }
    }

    pub fn from_name(s: &str) -> Option<ModelKind> {
        match s {
            "seq-token" => Some(ModelKind::SeqToken),
            "seq-instr" => Some(ModelKind::SeqInstr),
            "graph" => Some(ModelKind::Graph),
            _ => None,
        }
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, ModelKind::SeqToken | ModelKind::SeqInstr)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("feature vector length {got} does not match the view ({expected})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("operation requires a {expected} model, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },
}

/// An embedding vector, L2-normalized unless the input was degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub unit: bool,
}

impl Embedding {
    pub(crate) fn normalized(mut values: Vec<f64>) -> Embedding {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            for v in values.iter_mut() {
                *v /= norm;
            }
            Embedding { values, unit: true }
        } else {
            Embedding {
                values,
                unit: false,
            }
        }
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let na: f64 = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na > 1e-300 && nb > 1e-300 {
            (dot / (na * nb)).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    /// Text dump at 17 significant digits, one value per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.values {
            out.push_str(&format!("{v:.17e}\n"));
        }
        out
    }
}

/// Where one flat feature index comes from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Provenance {
    Token { instr: usize, pos: usize },
    Instruction(usize),
    BlockCell { block: usize, col: usize },
}

impl Provenance {
    pub fn instr_index(&self) -> Option<usize> {
        match self {
            Provenance::Token { instr, .. } => Some(*instr),
            Provenance::Instruction(i) => Some(*i),
            Provenance::BlockCell { .. } => None,
        }
    }
}

/// Flattened feature vector of one function under one model, with
/// provenance per index and the per-index replacement value that represents
/// a `nop` (the LIME perturbation target).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureView {
    pub kind: ModelKind,
    pub values: Vec<f64>,
    pub nop_values: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Number of instructions (sequence kinds) for positional weighting.
    pub instr_count: usize,
    /// Block count and adjacency (graph kind only).
    pub block_count: usize,
    pub edges: Vec<(usize, usize)>,
}

impl FeatureView {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A seeded surrogate model. Parameters are immutable after construction.
#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub seed: u64,
    pub dim: usize,
    pub rounds: usize,
    token_table: Vec<Vec<f64>>,
    w_input: Vec<Vec<f64>>,    // dim x 8
    w_neighbor: Vec<Vec<f64>>, // dim x dim
    w_output: Vec<Vec<f64>>,   // dim x dim
}

/// Positional weight of instruction `i` in a sequence embedding.
pub fn positional_weight(i: usize) -> f64 {
    1.0 / (1.0 + 0.01 * i as f64)
}

fn seeded_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut m = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        m.push(row);
    }
    m
}

impl Model {
    pub fn new(kind: ModelKind, seed: u64) -> Model {
        Model::with_shape(kind, seed, DEFAULT_DIM, DEFAULT_ROUNDS)
    }

    pub fn with_shape(kind: ModelKind, seed: u64, dim: usize, rounds: usize) -> Model {
        // Independent streams per parameter group so kinds share the token
        // table for a given seed.
        let mut table_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x746f_6b65_6e73);
        let token_table = seeded_matrix(&mut table_rng, TOKEN_TABLE_SIZE, dim);
        let mut graph_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6772_6170_68);
        let w_input = seeded_matrix(&mut graph_rng, dim, 8);
        let w_neighbor = seeded_matrix(&mut graph_rng, dim, dim);
        let w_output = seeded_matrix(&mut graph_rng, dim, dim);
        Model {
            kind,
            seed,
            dim,
            rounds,
            token_table,
            w_input,
            w_neighbor,
            w_output,
        }
    }

    pub(crate) fn graph_weights(&self) -> (&[Vec<f64>], &[Vec<f64>], &[Vec<f64>]) {
        (&self.w_input, &self.w_neighbor, &self.w_output)
    }

    fn token_index(text: &str) -> usize {
        (fnv1a_str(text) % TOKEN_TABLE_SIZE as u64) as usize
    }

    /// Table row for a (possibly fractional) token index; fractional values
    /// interpolate between adjacent rows so instruction-granularity features
    /// stay sensitive to single-cell perturbations.
    pub(crate) fn table_lookup(&self, index: f64) -> Vec<f64> {
        let v = index.rem_euclid(TOKEN_TABLE_SIZE as f64);
        let lo = v.floor() as usize % TOKEN_TABLE_SIZE;
        let hi = (lo + 1) % TOKEN_TABLE_SIZE;
        let frac = v - v.floor();
        if frac == 0.0 {
            return self.token_table[lo].clone();
        }
        self.token_table[lo]
            .iter()
            .zip(&self.token_table[hi])
            .map(|(a, b)| a * (1.0 - frac) + b * frac)
            .collect()
    }

    /// Flat feature vector with provenance and per-index nop replacement.
    pub fn feature_view(&self, f: &FunctionUnit) -> FeatureView {
        match self.kind {
            ModelKind::SeqToken => {
                let tokens = features::function_tokens(f);
                let nop = Model::token_index("nop") as f64;
                FeatureView {
                    kind: self.kind,
                    values: tokens
                        .iter()
                        .map(|t| Model::token_index(&t.text) as f64)
                        .collect(),
                    nop_values: vec![nop; tokens.len()],
                    provenance: tokens
                        .iter()
                        .map(|t| Provenance::Token {
                            instr: t.instr,
                            pos: t.pos,
                        })
                        .collect(),
                    instr_count: f.instruction_count(),
                    block_count: 0,
                    edges: Vec::new(),
                }
            }
            ModelKind::SeqInstr => {
                let tokens = features::function_tokens(f);
                let n = f.instruction_count();
                let mut sums = vec![0.0f64; n];
                let mut counts = vec![0usize; n];
                for t in &tokens {
                    sums[t.instr] += Model::token_index(&t.text) as f64;
                    counts[t.instr] += 1;
                }
                let values: Vec<f64> = sums
                    .iter()
                    .zip(&counts)
                    .map(|(s, c)| s / (*c).max(1) as f64)
                    .collect();
                let nop = Model::token_index("nop") as f64;
                FeatureView {
                    kind: self.kind,
                    values,
                    nop_values: vec![nop; n],
                    provenance: (0..n).map(Provenance::Instruction).collect(),
                    instr_count: n,
                    block_count: 0,
                    edges: Vec::new(),
                }
            }
            ModelKind::Graph => {
                let cfg = Cfg::build(f).expect("feature_view requires a valid function");
                let matrix = features::acfg(f, &cfg);
                let rows = matrix.rows();
                let mut values = Vec::with_capacity(rows.len() * 8);
                let mut nop_values = Vec::with_capacity(rows.len() * 8);
                let mut provenance = Vec::with_capacity(rows.len() * 8);
                for (bi, row) in rows.iter().enumerate() {
                    for (col, &v) in row.iter().enumerate() {
                        values.push(v);
                        // A single-nop block: one instruction, no counted
                        // categories; degree and centrality are preserved.
                        nop_values.push(match col {
                            COL_N_INSTR => 1.0,
                            COL_N_OFFSPRING | COL_BETWEENNESS => v,
                            _ => 0.0,
                        });
                        provenance.push(Provenance::BlockCell { block: bi, col });
                    }
                }
                FeatureView {
                    kind: self.kind,
                    values,
                    nop_values,
                    provenance,
                    instr_count: f.instruction_count(),
                    block_count: rows.len(),
                    edges: matrix.edges,
                }
            }
        }
    }

    /// Embed a (possibly perturbed) feature vector against the shape
    /// information in `view`. With `values == view.values` this is exactly
    /// [`Model::embed`].
    pub fn embed_from_features(
        &self,
        view: &FeatureView,
        values: &[f64],
    ) -> Result<Embedding, ModelError> {
        if values.len() != view.len() {
            return Err(ModelError::ShapeMismatch {
                expected: view.len(),
                got: values.len(),
            });
        }
        match view.kind {
            ModelKind::SeqToken => {
                let mut sums = vec![vec![0.0f64; self.dim]; view.instr_count];
                let mut counts = vec![0usize; view.instr_count];
                for (idx, &v) in values.iter().enumerate() {
                    let instr = view.provenance[idx]
                        .instr_index()
                        .expect("token view provenance");
                    let row = self.table_lookup(v.round());
                    for (acc, x) in sums[instr].iter_mut().zip(&row) {
                        *acc += x;
                    }
                    counts[instr] += 1;
                }
                let mut function = vec![0.0f64; self.dim];
                for (i, (sum, count)) in sums.iter().zip(&counts).enumerate() {
                    if *count == 0 {
                        continue;
                    }
                    let w = positional_weight(i) / *count as f64;
                    for (acc, x) in function.iter_mut().zip(sum) {
                        *acc += w * x;
                    }
                }
                Ok(Embedding::normalized(function))
            }
            ModelKind::SeqInstr => {
                let mut function = vec![0.0f64; self.dim];
                for (i, &v) in values.iter().enumerate() {
                    let row = self.table_lookup(v);
                    let w = positional_weight(i);
                    for (acc, x) in function.iter_mut().zip(&row) {
                        *acc += w * x;
                    }
                }
                Ok(Embedding::normalized(function))
            }
            ModelKind::Graph => {
                let rows: Vec<Vec<f64>> = values.chunks(8).map(|c| c.to_vec()).collect();
                Ok(embed_graph(self, &rows, &view.edges, None, None))
            }
        }
    }

    pub fn embed(&self, f: &FunctionUnit) -> Embedding {
        let view = self.feature_view(f);
        self.embed_from_features(&view, &view.values.clone())
            .expect("view is self-consistent")
    }

    /// Cosine similarity of two function embeddings.
    pub fn similarity(&self, a: &FunctionUnit, b: &FunctionUnit) -> f64 {
        self.embed(a).cosine(&self.embed(b))
    }
}
