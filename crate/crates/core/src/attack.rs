//! The explainer-guided iterative targeted attack: maximize the minimum
//! similarity between an adversarial copy of the source function and a set
//! of target functions, editing only through oracle-validated
//! semantics-preserving perturbations.

use crate::asm::FunctionUnit;
use crate::explain::{
    explain_sequence, gnn_explain, map_instructions_direct, map_tokens_to_instructions,
    select_top_instructions, type_vocab_map, ExplainError, GnnSettings, InstructionImportance,
    LimeConfig,
};
use crate::models::{Embedding, Model, ModelKind};
use crate::perturb::{
    apply, diff_stats, sample_candidates, validate, ModificationStats, Perturbation, Site,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AttackError {
    #[error("target set is empty")]
    EmptyTargets,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

/// How the candidate budget is spread over the selected sites.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BudgetMode {
    /// `budget` is the per-iteration total, split evenly across sites.
    PerIteration,
    /// Every site gets the full `budget`.
    PerSite,
}

/// Which instruction-selection mechanism drives each iteration.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SelectionStrategy {
    /// Model-appropriate explainer (LIME for sequences, mask optimization
    /// for graphs).
    Explainer,
    /// Per-instruction nop-ablation sweep — the expensive reference.
    Exhaustive,
    /// Seeded uniform choice — the control baseline.
    Random,
}

#[derive(Clone, Debug)]
pub struct AttackConfig {
    /// Early-stop similarity threshold, in (0, 1].
    pub thres: f64,
    pub max_iter: usize,
    /// Candidate perturbations per iteration (or per site, see mode).
    pub budget: usize,
    /// Probability of accepting the runner-up candidate.
    pub p_u: f64,
    /// Instructions selected per iteration.
    pub top_n: usize,
    pub oracle_trials: usize,
    pub seed: u64,
    pub budget_mode: BudgetMode,
    pub selection: SelectionStrategy,
    pub lime: LimeConfig,
    pub gnn: GnnSettings,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            thres: 1.0,
            max_iter: 30,
            budget: 2100,
            p_u: 0.1,
            top_n: 3,
            oracle_trials: 32,
            seed: 0,
            budget_mode: BudgetMode::PerIteration,
            selection: SelectionStrategy::Explainer,
            lime: LimeConfig::default(),
            gnn: GnnSettings::default(),
        }
    }
}

impl AttackConfig {
    fn check(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.p_u) {
            return Err(AttackError::BadConfig(format!("p_u = {}", self.p_u)));
        }
        if self.max_iter < 1 {
            return Err(AttackError::BadConfig("max_iter must be >= 1".into()));
        }
        if !(self.thres > 0.0 && self.thres <= 1.0) {
            return Err(AttackError::BadConfig(format!("thres = {}", self.thres)));
        }
        if self.top_n < 1 {
            return Err(AttackError::BadConfig("top_n must be >= 1".into()));
        }
        Ok(())
    }
}

/// One accepted (or rejected) iteration of the attack loop.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iter: usize,
    pub target_index: usize,
    /// Global instruction indices chosen for perturbation.
    pub sites: Vec<usize>,
    pub candidates_sampled: usize,
    pub candidates_valid: usize,
    pub accepted: Option<Perturbation>,
    /// True when the runner-up branch of the acceptance rule fired.
    pub accepted_runner_up: bool,
    /// Similarity to this iteration's target before / after the step.
    pub sim_before: f64,
    pub sim_after: f64,
    /// Eq. (2) objective after the step.
    pub objective: f64,
    pub explain_secs: f64,
    pub perturb_secs: f64,
    pub evaluate_secs: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AttackTiming {
    pub explain_secs: f64,
    pub perturb_secs: f64,
    pub evaluate_secs: f64,
    pub total_secs: f64,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub function: FunctionUnit,
    /// Per-target: did the final function reach `thres` similarity?
    pub success: Vec<bool>,
    /// Eq. (2) objective before the loop and after every iteration.
    pub objective_history: Vec<f64>,
    pub stats: ModificationStats,
    pub trace: Vec<IterationRecord>,
    pub timing: AttackTiming,
}

/// Eq. (2): the minimum similarity over the target set.
pub fn objective_min_sim(model: &Model, f: &FunctionUnit, targets: &[FunctionUnit]) -> f64 {
    let emb = model.embed(f);
    targets
        .iter()
        .map(|t| emb.cosine(&model.embed(t)))
        .fold(f64::INFINITY, f64::min)
}

/// Index of the least similar target; ties go to the lowest index.
pub fn select_target_greedy(model: &Model, f: &FunctionUnit, targets: &[FunctionUnit]) -> usize {
    let emb = model.embed(f);
    let mut best = 0usize;
    let mut best_sim = f64::INFINITY;
    for (i, t) in targets.iter().enumerate() {
        let s = emb.cosine(&model.embed(t));
        if s < best_sim {
            best_sim = s;
            best = i;
        }
    }
    best
}

/// Reference selector: per-instruction |similarity delta| under nop
/// ablation. Terminators score zero — removing one invalidates the CFG.
pub fn baseline_exhaustive_select(
    model: &Model,
    f: &FunctionUnit,
    target: &FunctionUnit,
) -> InstructionImportance {
    let target_emb = model.embed(target);
    let base = model.embed(f).cosine(&target_emb);
    let mut scores = Vec::with_capacity(f.instruction_count());
    for (_, b, off, instr) in f.instructions() {
        if instr.is_terminator() {
            scores.push(0.0);
            continue;
        }
        let mut probe = f.clone();
        probe.blocks[b].instructions[off] =
            crate::asm::Instruction::new(crate::asm::isa::Opcode::Nop, Vec::new());
        let sim = model.embed(&probe).cosine(&target_emb);
        scores.push((base - sim).abs());
    }
    InstructionImportance::new(scores)
}

/// Control baseline: `n` seeded distinct non-terminator indices.
pub fn baseline_random_select(f: &FunctionUnit, n: usize, seed: u64) -> Vec<usize> {
    let mut eligible: Vec<usize> = f
        .instructions()
        .filter(|(_, _, _, i)| !i.is_terminator())
        .map(|(g, _, _, _)| g)
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let take = n.min(eligible.len());
    for i in 0..take {
        let j = rng.gen_range(i..eligible.len());
        eligible.swap(i, j);
    }
    eligible.truncate(take);
    eligible
}

fn select_sites(
    model: &Model,
    current: &FunctionUnit,
    target: &FunctionUnit,
    target_emb: &Embedding,
    cfg: &AttackConfig,
    explain_seed: u64,
) -> Result<Vec<usize>, AttackError> {
    match cfg.selection {
        SelectionStrategy::Random => Ok(baseline_random_select(current, cfg.top_n, explain_seed)),
        SelectionStrategy::Exhaustive => {
            let imp = baseline_exhaustive_select(model, current, target);
            Ok(select_top_instructions(&imp, cfg.top_n, current))
        }
        SelectionStrategy::Explainer => {
            let imp = match model.kind {
                ModelKind::SeqToken | ModelKind::SeqInstr => {
                    let view = model.feature_view(current);
                    let lime = LimeConfig {
                        seed: explain_seed,
                        ..cfg.lime.clone()
                    };
                    let weights = explain_sequence(model, &view, target_emb, &lime)?;
                    match model.kind {
                        ModelKind::SeqToken => map_tokens_to_instructions(&weights, &view)?,
                        _ => map_instructions_direct(&weights, &view)?,
                    }
                }
                ModelKind::Graph => {
                    let expl = gnn_explain(model, current, target, &cfg.gnn)?;
                    type_vocab_map(&expl.feature_mask, current)?
                }
            };
            Ok(select_top_instructions(&imp, cfg.top_n, current))
        }
    }
}

/// Algorithm 1. See module docs; the returned function is always
/// oracle-equivalent to `source`.
pub fn run_attack(
    source: &FunctionUnit,
    targets: &[FunctionUnit],
    cfg: &AttackConfig,
    model: &Model,
) -> Result<AttackResult, AttackError> {
    cfg.check()?;
    if targets.is_empty() {
        return Err(AttackError::EmptyTargets);
    }
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let target_embs: Vec<Embedding> = targets.iter().map(|t| model.embed(t)).collect();

    let mut current = source.clone();
    let mut target_idx = rng.gen_range(0..targets.len());
    let mut objective_history = vec![objective_min_sim(model, &current, targets)];
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut timing = AttackTiming::default();

    for iter in 0..cfg.max_iter {
        let sim_before = model.embed(&current).cosine(&target_embs[target_idx]);
        if sim_before >= cfg.thres {
            break;
        }
        // Pre-draw this iteration's random stream in a fixed order so the
        // result does not depend on evaluation scheduling.
        let explain_seed: u64 = rng.gen();
        let sample_seed: u64 = rng.gen();
        let oracle_seed: u64 = rng.gen();
        let coin: f64 = rng.gen();

        let t_explain = Instant::now();
        let sites = select_sites(
            model,
            &current,
            &targets[target_idx],
            &target_embs[target_idx],
            cfg,
            explain_seed,
        )?;
        let explain_secs = t_explain.elapsed().as_secs_f64();

        let t_perturb = Instant::now();
        let mut candidates: Vec<Perturbation> = Vec::new();
        if !sites.is_empty() {
            let per_site = match cfg.budget_mode {
                BudgetMode::PerIteration => cfg.budget / sites.len(),
                BudgetMode::PerSite => cfg.budget,
            };
            let mut remainder = match cfg.budget_mode {
                BudgetMode::PerIteration => cfg.budget % sites.len(),
                BudgetMode::PerSite => 0,
            };
            for (k, &g) in sites.iter().enumerate() {
                let extra = if remainder > 0 {
                    remainder -= 1;
                    1
                } else {
                    0
                };
                if let Some(site) = Site::from_global(&current, g) {
                    candidates.extend(sample_candidates(
                        &current,
                        &site,
                        per_site + extra,
                        sample_seed.wrapping_add(k as u64),
                    ));
                }
            }
        }
        let candidates_sampled = candidates.len();
        let perturb_secs = t_perturb.elapsed().as_secs_f64();

        let t_eval = Instant::now();
        let mut scored: Vec<(f64, Perturbation, FunctionUnit)> = Vec::new();
        for p in candidates {
            let Ok(out) = apply(&current, &p) else { continue };
            if !validate(&current, &out, cfg.oracle_trials, oracle_seed) {
                continue;
            }
            let sim = model.embed(&out).cosine(&target_embs[target_idx]);
            scored.push((sim, p, out));
        }
        let candidates_valid = scored.len();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.key().cmp(&b.1.key()))
        });
        let evaluate_secs = t_eval.elapsed().as_secs_f64();

        let best_improves = scored.first().map(|c| c.0 > sim_before).unwrap_or(false);
        let take_runner = coin < cfg.p_u && scored.len() >= 2;
        let chosen = if take_runner {
            Some(1)
        } else if best_improves {
            Some(0)
        } else {
            None
        };
        let (accepted, sim_after) = match chosen {
            Some(idx) => {
                let (sim, p, out) = scored.swap_remove(idx);
                current = out;
                (Some(p), sim)
            }
            None => (None, sim_before),
        };

        let objective = objective_min_sim(model, &current, targets);
        trace.push(IterationRecord {
            iter,
            target_index: target_idx,
            sites,
            candidates_sampled,
            candidates_valid,
            accepted,
            accepted_runner_up: take_runner,
            sim_before,
            sim_after,
            objective,
            explain_secs,
            perturb_secs,
            evaluate_secs,
        });
        objective_history.push(objective);
        timing.explain_secs += explain_secs;
        timing.perturb_secs += perturb_secs;
        timing.evaluate_secs += evaluate_secs;

        target_idx = select_target_greedy(model, &current, targets);
    }

    timing.total_secs = start.elapsed().as_secs_f64();
    assert!(
        validate(source, &current, cfg.oracle_trials, cfg.seed ^ 0x6f72_6163),
        "attack result must stay oracle-equivalent to its input"
    );
    let final_emb = model.embed(&current);
    let success = target_embs
        .iter()
        .map(|t| final_emb.cosine(t) >= cfg.thres)
        .collect();
    Ok(AttackResult {
        stats: diff_stats(source, &current),
        function: current,
        success,
        objective_history,
        trace,
        timing,
    })
}
