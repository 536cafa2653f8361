//! Seeded corpus generation: random terminating functions, variant sets
//! standing in for different compilation configurations, and full
//! retrieval scenarios for the evaluation harness.
//!
//! Generated CFGs only branch forward, so every function terminates and
//! the only interpreter hazard left — a conditional jump with undefined
//! flags — is avoided by always pairing conditionals with a fresh `cmp`.

use crate::asm::isa::Opcode;
use crate::asm::{BasicBlock, FunctionUnit, Instruction, Operand};
use crate::eval::{FunctionPool, PoolEntry, Scenario};
use crate::perturb::{apply, sample_candidates, Site};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::fmt::Write as _;

#[derive(Clone, Debug)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Total pool size per scenario, including the 4 marked variants.
    pub pool_size: usize,
    pub scenarios: usize,
    /// Probability that a scenario's source is itself a variant of the
    /// target base, so unattacked queries sometimes already rank targets
    /// top-K (the INIT base rate).
    pub related_source_prob: f64,
    pub instr_range: (usize, usize),
    pub block_range: (usize, usize),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            pool_size: 128,
            scenarios: 8,
            related_source_prob: 0.25,
            instr_range: (5, 200),
            block_range: (1, 40),
        }
    }
}

pub const VARIANTS_PER_SCENARIO: usize = 4;

#[derive(Clone, Debug)]
pub struct Corpus {
    pub scenarios: Vec<Scenario>,
    /// Deterministic description of every member, mark and seed.
    pub manifest: String,
}

const CALLEES: [&str; 4] = ["helper", "log", "init", "emit"];
const STRINGS: [&str; 4] = ["fmt", "msg", "err", "path"];

fn reg(rng: &mut ChaCha20Rng) -> u8 {
    rng.gen_range(0..16)
}

fn immediate(rng: &mut ChaCha20Rng) -> i64 {
    if rng.gen_bool(0.2) {
        rng.gen_range(4096..65536) // above the constant-feature threshold
    } else {
        rng.gen_range(-16..64)
    }
}

/// Emit one body step: usually one instruction, a push/pop pair when room
/// allows. Returns how many instructions were appended.
fn push_body_instruction(out: &mut Vec<Instruction>, room: usize, rng: &mut ChaCha20Rng) -> usize {
    debug_assert!(room >= 1);
    let arith = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Xor,
        Opcode::And,
        Opcode::Or,
        Opcode::Shl,
        Opcode::Shr,
    ];
    match rng.gen_range(0..12u32) {
        0..=4 => {
            let op = arith[rng.gen_range(0..arith.len())];
            let src = match op {
                // Keep shift counts small so values stay interesting.
                Opcode::Shl | Opcode::Shr => Operand::Imm(rng.gen_range(0..8)),
                _ if rng.gen_bool(0.3) => Operand::Reg(reg(rng)),
                _ => Operand::Imm(immediate(rng)),
            };
            out.push(Instruction::new(op, vec![Operand::Reg(reg(rng)), src]));
        }
        5 => out.push(Instruction::new(
            Opcode::Mov,
            vec![Operand::Reg(reg(rng)), Operand::Imm(immediate(rng))],
        )),
        6 => {
            let src = if rng.gen_bool(0.4) {
                Operand::Str(STRINGS[rng.gen_range(0..STRINGS.len())].to_string())
            } else {
                Operand::Reg(reg(rng))
            };
            out.push(Instruction::new(Opcode::Mov, vec![Operand::Reg(reg(rng)), src]));
        }
        7 => out.push(Instruction::new(
            Opcode::Load,
            vec![
                Operand::Reg(reg(rng)),
                Operand::Mem { base: reg(rng), offset: rng.gen_range(-32..64) },
            ],
        )),
        8 => out.push(Instruction::new(
            Opcode::Store,
            vec![
                Operand::Mem { base: reg(rng), offset: rng.gen_range(-32..64) },
                Operand::Reg(reg(rng)),
            ],
        )),
        9 if room >= 2 => {
            out.push(Instruction::new(Opcode::Push, vec![Operand::Reg(reg(rng))]));
            out.push(Instruction::new(Opcode::Pop, vec![Operand::Reg(reg(rng))]));
            return 2;
        }
        10 => out.push(Instruction::new(
            Opcode::Call,
            vec![Operand::Func(CALLEES[rng.gen_range(0..CALLEES.len())].to_string())],
        )),
        _ => out.push(Instruction::new(
            Opcode::Cmp,
            vec![Operand::Reg(reg(rng)), Operand::Imm(rng.gen_range(-8..32))],
        )),
    }
    1
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum TermPlan {
    FallThrough,
    Jump,
    /// cmp + je/jne with a forward taken edge.
    Cond,
    Ret,
}

impl TermPlan {
    fn cost(self) -> usize {
        match self {
            TermPlan::FallThrough => 0,
            TermPlan::Jump | TermPlan::Ret => 1,
            TermPlan::Cond => 2,
        }
    }
}

/// One random terminating function. Block and instruction counts stay
/// within the configured ranges.
pub fn generate_function(name: &str, cfg: &CorpusConfig, rng: &mut ChaCha20Rng) -> FunctionUnit {
    let (block_lo, block_hi) = cfg.block_range;
    let (instr_lo, instr_hi) = cfg.instr_range;
    let n_blocks = rng.gen_range(block_lo.max(1)..=block_hi);

    let mut plans = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        if i + 1 == n_blocks {
            plans.push(TermPlan::Ret);
        } else {
            plans.push(match rng.gen_range(0..10u32) {
                0..=3 => TermPlan::FallThrough,
                4..=6 => TermPlan::Jump,
                _ => TermPlan::Cond,
            });
        }
    }
    // Every fallthrough block still needs a body instruction.
    let min_bodies: Vec<usize> = plans
        .iter()
        .map(|p| usize::from(*p == TermPlan::FallThrough))
        .collect();
    let min_total: usize = plans.iter().map(|p| p.cost()).sum::<usize>()
        + min_bodies.iter().sum::<usize>();
    let total = rng.gen_range(instr_lo..=instr_hi).max(min_total);
    let mut extra = total - min_total;

    let mut bodies: Vec<usize> = min_bodies;
    while extra > 0 {
        let b = rng.gen_range(0..n_blocks);
        bodies[b] += 1;
        extra -= 1;
    }

    let mut blocks = Vec::with_capacity(n_blocks);
    for (i, plan) in plans.iter().enumerate() {
        let mut instrs = Vec::with_capacity(bodies[i] + plan.cost());
        let mut remaining = bodies[i];
        while remaining > 0 {
            remaining -= push_body_instruction(&mut instrs, remaining, rng);
        }
        match plan {
            TermPlan::FallThrough => {}
            TermPlan::Ret => instrs.push(Instruction::new(Opcode::Ret, Vec::new())),
            TermPlan::Jump => instrs.push(Instruction::new(
                Opcode::Jmp,
                vec![Operand::Label(format!("b{}", i + 1))],
            )),
            TermPlan::Cond => {
                let taken = rng.gen_range(i + 1..n_blocks);
                instrs.push(Instruction::new(
                    Opcode::Cmp,
                    vec![Operand::Reg(reg(rng)), Operand::Imm(rng.gen_range(-8..32))],
                ));
                let op = if rng.gen_bool(0.5) { Opcode::Je } else { Opcode::Jne };
                instrs.push(Instruction::new(op, vec![Operand::Label(format!("b{taken}"))]));
            }
        }
        blocks.push(BasicBlock::new(format!("b{i}"), instrs));
    }
    let f = FunctionUnit::new(name, blocks);
    debug_assert!(f.validate().is_ok(), "{}", f.serialize());
    f
}

/// `count` seeded semantics-preserving mutations of `base`, named
/// `<base>_v<i>`; stand-ins for different compilation configurations.
pub fn make_variants(base: &FunctionUnit, count: usize, seed: u64) -> Vec<FunctionUnit> {
    (0..count)
        .map(|j| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(j as u64));
            let mut cur = base.clone();
            let edits = rng.gen_range(1..=3);
            for _ in 0..edits {
                let terminators: std::collections::BTreeSet<usize> =
                    cur.terminator_indices().into_iter().collect();
                let eligible: Vec<usize> = (0..cur.instruction_count())
                    .filter(|g| !terminators.contains(g))
                    .collect();
                if eligible.is_empty() {
                    break;
                }
                let g = eligible[rng.gen_range(0..eligible.len())];
                let Some(site) = Site::from_global(&cur, g) else { break };
                let cands = sample_candidates(&cur, &site, 16, rng.gen());
                if cands.is_empty() {
                    continue;
                }
                let pick = rng.gen_range(0..cands.len());
                if let Ok(out) = apply(&cur, &cands[pick]) {
                    cur = out;
                }
            }
            cur.name = format!("{}_v{j}", base.name);
            cur
        })
        .collect()
}

/// Build the full seeded corpus: shared distractors plus per-scenario
/// target variants and sources.
pub fn generate_corpus(cfg: &CorpusConfig) -> Corpus {
    assert!(
        cfg.pool_size > VARIANTS_PER_SCENARIO,
        "pool must hold distractors besides the variants"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let n_distractors = cfg.pool_size - VARIANTS_PER_SCENARIO;
    let distractors: Vec<FunctionUnit> = (0..n_distractors)
        .map(|i| generate_function(&format!("fn{i}"), cfg, &mut rng))
        .collect();

    let mut manifest = String::new();
    let _ = writeln!(manifest, "corpus-seed: {}", cfg.seed);
    let _ = writeln!(manifest, "pool-size: {}", cfg.pool_size);
    let _ = writeln!(manifest, "scenarios: {}", cfg.scenarios);
    let _ = writeln!(manifest, "related-source-prob: {}", cfg.related_source_prob);
    let _ = writeln!(manifest, "instr-range: {}..={}", cfg.instr_range.0, cfg.instr_range.1);
    let _ = writeln!(manifest, "block-range: {}..={}", cfg.block_range.0, cfg.block_range.1);
    for d in &distractors {
        let _ = writeln!(
            manifest,
            "distractor {} blocks={} instrs={}",
            d.name,
            d.blocks.len(),
            d.instruction_count()
        );
    }

    let mut scenarios = Vec::with_capacity(cfg.scenarios);
    for s in 0..cfg.scenarios {
        let base = generate_function(&format!("tgt{s}"), cfg, &mut rng);
        let variant_seed: u64 = rng.gen();
        let variants = make_variants(&base, VARIANTS_PER_SCENARIO, variant_seed);
        let related = rng.gen_bool(cfg.related_source_prob);
        let mut source = if related {
            let mut v = make_variants(&base, 1, variant_seed.wrapping_add(0x5eed))
                .pop()
                .expect("one variant requested");
            v.name.clear();
            v
        } else {
            let mut f = generate_function("src", cfg, &mut rng);
            f.name.clear();
            f
        };
        source.name = format!("src{s}");

        let mut entries: Vec<PoolEntry> = distractors
            .iter()
            .map(|d| PoolEntry { function: d.clone(), is_target: false })
            .collect();
        for v in &variants {
            entries.push(PoolEntry { function: v.clone(), is_target: true });
        }
        let pool = FunctionPool::new(entries).expect("generated names are unique");

        let _ = writeln!(
            manifest,
            "scenario scenario{s} source={} related={} target-base={} variant-seed={}",
            source.name, related, base.name, variant_seed
        );
        for v in &variants {
            let _ = writeln!(manifest, "  variant {}", v.name);
        }

        scenarios.push(Scenario {
            name: format!("scenario{s}"),
            adversarial: source.clone(),
            source,
            pool,
        });
    }
    Corpus { scenarios, manifest }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::validate;

    fn small() -> CorpusConfig {
        CorpusConfig {
            seed: 9,
            pool_size: 12,
            scenarios: 2,
            related_source_prob: 0.5,
            instr_range: (5, 30),
            block_range: (1, 5),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small());
        let b = generate_corpus(&small());
        assert_eq!(a.manifest, b.manifest);
        for (x, y) in a.scenarios.iter().zip(&b.scenarios) {
            assert_eq!(x.source, y.source);
            assert_eq!(x.pool.len(), y.pool.len());
            for (p, q) in x.pool.entries.iter().zip(&y.pool.entries) {
                assert_eq!(p.function, q.function);
                assert_eq!(p.is_target, q.is_target);
            }
        }
    }

    #[test]
    fn generated_functions_respect_ranges_and_validate() {
        let cfg = CorpusConfig {
            instr_range: (5, 200),
            block_range: (1, 40),
            ..small()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for i in 0..40 {
            let f = generate_function(&format!("g{i}"), &cfg, &mut rng);
            f.validate().unwrap();
            assert!((1..=40).contains(&f.blocks.len()), "{}", f.blocks.len());
            assert!(f.instruction_count() >= 5 && f.instruction_count() <= 200);
        }
    }

    #[test]
    fn corpus_spans_single_and_multi_block_shapes() {
        let cfg = CorpusConfig {
            pool_size: 40,
            ..small()
        };
        let c = generate_corpus(&cfg);
        let sizes: Vec<usize> = c.scenarios[0]
            .pool
            .entries
            .iter()
            .map(|e| e.function.blocks.len())
            .collect();
        assert!(sizes.iter().min() != sizes.iter().max(), "{sizes:?}");
    }

    #[test]
    fn variants_are_marked_equivalent_mutations() {
        let c = generate_corpus(&small());
        for scenario in &c.scenarios {
            let marked: Vec<_> = scenario
                .pool
                .entries
                .iter()
                .filter(|e| e.is_target)
                .collect();
            assert_eq!(marked.len(), VARIANTS_PER_SCENARIO);
            // All variants of one base are pairwise oracle-equivalent.
            for pair in marked.windows(2) {
                assert!(validate(&pair[0].function, &pair[1].function, 8, 21));
            }
        }
    }

    #[test]
    fn related_source_prob_one_yields_equivalent_sources() {
        let cfg = CorpusConfig {
            related_source_prob: 1.0,
            ..small()
        };
        let c = generate_corpus(&cfg);
        for scenario in &c.scenarios {
            let target = scenario
                .pool
                .entries
                .iter()
                .find(|e| e.is_target)
                .unwrap();
            assert!(validate(&scenario.source, &target.function, 8, 2));
        }
    }

    #[test]
    fn manifest_lists_every_pool_member() {
        let c = generate_corpus(&small());
        for scenario in &c.scenarios {
            assert!(c.manifest.contains(&scenario.name));
            for e in &scenario.pool.entries {
                assert!(c.manifest.contains(&e.function.name), "{}", e.function.name);
            }
        }
    }
}
