//! Pool-based retrieval evaluation: top-K ranking, ASR@i and wASR,
//! modification accounting, timing summaries and cross-model
//! transferability matrices.

use crate::asm::FunctionUnit;
use crate::models::{Model, ModelKind};
use crate::perturb::diff_stats;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("K = {k} exceeds the pool size {pool}")]
    KOutOfRange { k: usize, pool: usize },
    #[error("duplicate pool member name `{0}`")]
    DuplicateName(String),
    #[error("no scenarios to evaluate")]
    Empty,
    #[error("nonpositive timing denominator")]
    NonpositiveTiming,
}

/// A retrieval pool: distractors plus the marked target variants.
#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub function: FunctionUnit,
    pub is_target: bool,
}

#[derive(Clone, Debug)]
pub struct FunctionPool {
    pub entries: Vec<PoolEntry>,
}

impl FunctionPool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<FunctionPool, EvalError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.function.name.clone()) {
                return Err(EvalError::DuplicateName(e.function.name.clone()));
            }
        }
        Ok(FunctionPool { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct RankedEntry {
    pub name: String,
    pub similarity: f64,
    pub is_target: bool,
}

/// Full descending ranking of a pool against one query.
#[derive(Clone, PartialEq, Debug)]
pub struct RankResult {
    pub ranked: Vec<RankedEntry>,
    pub k: usize,
}

impl RankResult {
    pub fn top_k(&self) -> &[RankedEntry] {
        &self.ranked[..self.k.min(self.ranked.len())]
    }

    pub fn targets_in_top_k(&self) -> usize {
        self.top_k().iter().filter(|e| e.is_target).count()
    }
}

/// Exact similarity ranking; ties broken by name so the order is total.
pub fn rank_topk(
    model: &Model,
    query: &FunctionUnit,
    pool: &FunctionPool,
    k: usize,
) -> Result<RankResult, EvalError> {
    if k > pool.len() {
        return Err(EvalError::KOutOfRange { k, pool: pool.len() });
    }
    let query_emb = model.embed(query);
    let mut ranked: Vec<RankedEntry> = pool
        .entries
        .iter()
        .map(|e| RankedEntry {
            name: e.function.name.clone(),
            similarity: query_emb.cosine(&model.embed(&e.function)),
            is_target: e.is_target,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(RankResult { ranked, k })
}

/// Fraction of attacks whose top-K holds at least `i` marked targets.
pub fn asr_at_i(results: &[RankResult], i: usize) -> f64 {
    debug_assert!((1..=4).contains(&i));
    if results.is_empty() {
        return 0.0;
    }
    let hits = results.iter().filter(|r| r.targets_in_top_k() >= i).count();
    hits as f64 / results.len() as f64
}

/// 0.25·ASR@1 + 0.5·ASR@2 + 0.75·ASR@3 + ASR@4, range [0, 2.5].
pub fn wasr(asr: [f64; 4]) -> f64 {
    0.25 * asr[0] + 0.5 * asr[1] + 0.75 * asr[2] + asr[3]
}

/// One attack scenario: a source, its adversarial output (equal to the
/// source for INIT baselines) and the retrieval pool with marked variants.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub source: FunctionUnit,
    pub adversarial: FunctionUnit,
    pub pool: FunctionPool,
}

#[derive(Clone, PartialEq, Debug)]
pub struct AttackRow {
    pub scenario: String,
    pub targets_in_top_k: usize,
    pub m_instrs: usize,
    pub m_nodes: usize,
}

/// Deterministic evaluation report (no wall-clock fields; timing lives in
/// [`TimingReport`] so the main report stays byte-stable across runs).
#[derive(Clone, PartialEq, Debug)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub k: usize,
    pub scenarios: usize,
    pub asr: [f64; 4],
    pub wasr: f64,
    pub mean_m_instrs: f64,
    pub mean_m_nodes: f64,
    pub rows: Vec<AttackRow>,
}

impl MetricsReport {
    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model.name());
        let _ = writeln!(out, "scenarios: {}  K: {}", self.scenarios, self.k);
        let _ = writeln!(
            out,
            "ASR@1 {:.4}  ASR@2 {:.4}  ASR@3 {:.4}  ASR@4 {:.4}  wASR {:.4}",
            self.asr[0], self.asr[1], self.asr[2], self.asr[3], self.wasr
        );
        let _ = writeln!(
            out,
            "mean M-Instrs {:.4}  mean M-Nodes {:.4}",
            self.mean_m_instrs, self.mean_m_nodes
        );
        out
    }

    /// Machine-readable rows; header documented in the README.
    pub fn csv(&self) -> String {
        let mut out = String::from("scenario,targets_in_top_k,m_instrs,m_nodes\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.scenario, r.targets_in_top_k, r.m_instrs, r.m_nodes
            );
        }
        out
    }
}

/// Rank every scenario's pool against its adversarial sample and fold the
/// results into ASR/wASR plus modification means.
pub fn evaluate(model: &Model, scenarios: &[Scenario], k: usize) -> Result<MetricsReport, EvalError> {
    if scenarios.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut results = Vec::with_capacity(scenarios.len());
    let mut rows = Vec::with_capacity(scenarios.len());
    let mut sum_instrs = 0usize;
    let mut sum_nodes = 0usize;
    for s in scenarios {
        let rank = rank_topk(model, &s.adversarial, &s.pool, k)?;
        let stats = diff_stats(&s.source, &s.adversarial);
        rows.push(AttackRow {
            scenario: s.name.clone(),
            targets_in_top_k: rank.targets_in_top_k(),
            m_instrs: stats.m_instrs,
            m_nodes: stats.m_nodes,
        });
        sum_instrs += stats.m_instrs;
        sum_nodes += stats.m_nodes;
        results.push(rank);
    }
    let asr = [
        asr_at_i(&results, 1),
        asr_at_i(&results, 2),
        asr_at_i(&results, 3),
        asr_at_i(&results, 4),
    ];
    let n = scenarios.len() as f64;
    Ok(MetricsReport {
        model: model.kind,
        k,
        scenarios: scenarios.len(),
        asr,
        wasr: wasr(asr),
        mean_m_instrs: sum_instrs as f64 / n,
        mean_m_nodes: sum_nodes as f64 / n,
        rows,
    })
}

/// wASR of every sample set under every evaluation model. Row = source
/// model that generated the samples, column = evaluating model.
#[derive(Clone, PartialEq, Debug)]
pub struct TransferMatrix {
    pub source_models: Vec<ModelKind>,
    pub eval_models: Vec<ModelKind>,
    pub wasr: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn render(&self) -> String {
        let mut out = String::from("source\\eval");
        for m in &self.eval_models {
            let _ = write!(out, ",{}", m.name());
        }
        out.push('\n');
        for (i, s) in self.source_models.iter().enumerate() {
            let _ = write!(out, "{}", s.name());
            for v in &self.wasr[i] {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn transfer_matrix(
    samples: &[(ModelKind, Vec<Scenario>)],
    eval_models: &[Model],
    k: usize,
) -> Result<TransferMatrix, EvalError> {
    let mut rows = Vec::with_capacity(samples.len());
    for (_, scenarios) in samples {
        let mut row = Vec::with_capacity(eval_models.len());
        for m in eval_models {
            row.push(evaluate(m, scenarios, k)?.wasr);
        }
        rows.push(row);
    }
    Ok(TransferMatrix {
        source_models: samples.iter().map(|(k, _)| *k).collect(),
        eval_models: eval_models.iter().map(|m| m.kind).collect(),
        wasr: rows,
    })
}

/// Wall-time means and the selection speedup over exhaustive ablation.
/// Lives in its own (non-deterministic) report file.
#[derive(Clone, PartialEq, Debug)]
pub struct TimingReport {
    pub mean_select_secs: f64,
    pub mean_baseline_select_secs: f64,
    pub mean_generate_secs: f64,
    /// baseline selection time / explainer selection time.
    pub speedup: f64,
}

impl TimingReport {
    pub fn render(&self) -> String {
        format!(
            "selection {:.6}s  baseline {:.6}s  generation {:.6}s  speedup {:.2}x\n",
            self.mean_select_secs,
            self.mean_baseline_select_secs,
            self.mean_generate_secs,
            self.speedup
        )
    }
}

pub fn timing_report(
    select_secs: &[f64],
    baseline_select_secs: &[f64],
    generate_secs: &[f64],
) -> Result<TimingReport, EvalError> {
    let mean = |xs: &[f64]| -> Result<f64, EvalError> {
        if xs.is_empty() {
            return Err(EvalError::Empty);
        }
        Ok(xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mean_select = mean(select_secs)?;
    let mean_baseline = mean(baseline_select_secs)?;
    let mean_generate = mean(generate_secs)?;
    if mean_select <= 0.0 || mean_baseline <= 0.0 {
        return Err(EvalError::NonpositiveTiming);
    }
    Ok(TimingReport {
        mean_select_secs: mean_select,
        mean_baseline_select_secs: mean_baseline,
        mean_generate_secs: mean_generate,
        speedup: mean_baseline / mean_select,
    })
}
