//! Semantics-preserving perturbations: dead-branch insertion, basic-block
//! split, adjacent instruction reordering and equivalent-instruction
//! replacement, plus candidate sampling, oracle validation and the
//! M-Instrs/M-Nodes accounting.
//!
//! Every transform is justified statically (liveness, dependence) and then
//! re-checked dynamically by [`validate`]; the attack pipeline discards
//! anything the oracle rejects.

use crate::asm::isa::Opcode;
use crate::asm::{semantic_equiv, BasicBlock, Equivalence, FunctionUnit, Instruction, Operand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("site {block}:{offset} does not index an instruction")]
    SiteOutOfRange { block: String, offset: usize },
    #[error("illegal reorder: adjacent instructions have a dependency conflict")]
    IllegalReorder,
    #[error("no rewrite rule matches the site instruction")]
    NoMatchingRule,
    #[error("flags are live at the site; an opaque predicate would clobber them")]
    FlagsLive,
    #[error("payload is invalid for this site")]
    InvalidPayload,
}

// ---------------------------------------------------------------------------
// Instruction effects and liveness
// ---------------------------------------------------------------------------

/// Static read/write footprint of one instruction. Memory is a single
/// conservative resource: addresses are dynamic, so any two memory accesses
/// where at least one writes are treated as conflicting.
#[derive(Clone, Copy, Default, Debug)]
pub(crate) struct Effects {
    pub reads: u16,
    pub writes: u16,
    pub reads_flags: bool,
    pub writes_flags: bool,
    pub reads_mem: bool,
    pub writes_mem: bool,
    pub call: bool,
}

pub(crate) fn effects(instr: &Instruction) -> Effects {
    let mut e = Effects::default();
    let bit = |r: u8| 1u16 << r;
    match instr.opcode {
        Opcode::Add
        | Opcode::Sub
        | Opcode::Mul
        | Opcode::Xor
        | Opcode::And
        | Opcode::Or
        | Opcode::Shl
        | Opcode::Shr => {
            if let Operand::Reg(r) = instr.operands[0] {
                e.reads |= bit(r);
                e.writes |= bit(r);
            }
            if let Operand::Reg(r) = instr.operands[1] {
                e.reads |= bit(r);
            }
            e.writes_flags = true;
        }
        Opcode::Mov => {
            if let Operand::Reg(r) = instr.operands[0] {
                e.writes |= bit(r);
            }
            match instr.operands[1] {
                Operand::Reg(r) => e.reads |= bit(r),
                Operand::Mem { base, .. } => {
                    e.reads |= bit(base);
                    e.reads_mem = true;
                }
                _ => {}
            }
        }
        Opcode::Load => {
            if let Operand::Reg(r) = instr.operands[0] {
                e.writes |= bit(r);
            }
            if let Operand::Mem { base, .. } = instr.operands[1] {
                e.reads |= bit(base);
            }
            e.reads_mem = true;
        }
        Opcode::Store => {
            if let Operand::Mem { base, .. } = instr.operands[0] {
                e.reads |= bit(base);
            }
            if let Operand::Reg(r) = instr.operands[1] {
                e.reads |= bit(r);
            }
            e.writes_mem = true;
        }
        Opcode::Push => {
            if let Operand::Reg(r) = instr.operands[0] {
                e.reads |= bit(r);
            }
            e.writes_mem = true;
        }
        Opcode::Pop => {
            if let Operand::Reg(r) = instr.operands[0] {
                e.writes |= bit(r);
            }
            // Popping removes the stack cell, so it also writes memory.
            e.reads_mem = true;
            e.writes_mem = true;
        }
        Opcode::Cmp => {
            for op in &instr.operands {
                if let Operand::Reg(r) = op {
                    e.reads |= bit(*r);
                }
            }
            e.writes_flags = true;
        }
        Opcode::Je | Opcode::Jne => e.reads_flags = true,
        Opcode::Jmp | Opcode::Nop => {}
        Opcode::Call => {
            e.reads |= 0b1111; // r0..r3 are the argument registers
            e.writes |= 0b0001;
            e.call = true;
        }
        Opcode::Ret => {
            // The oracle compares every register and all memory at exit.
            e.reads = u16::MAX;
            e.reads_mem = true;
        }
    }
    e
}

fn reg_live_out(f: &FunctionUnit) -> Vec<u16> {
    let edges = f.edges().unwrap_or_default();
    let n = f.blocks.len();
    let mut live_in = vec![0u16; n];
    let mut live_out = vec![0u16; n];
    loop {
        let mut changed = false;
        for b in (0..n).rev() {
            let mut out = 0u16;
            for &(s, t) in &edges {
                if s == b {
                    out |= live_in[t];
                }
            }
            let mut live = out;
            for instr in f.blocks[b].instructions.iter().rev() {
                let e = effects(instr);
                live = (live & !e.writes) | e.reads;
            }
            changed |= out != live_out[b] || live != live_in[b];
            live_out[b] = out;
            live_in[b] = live;
        }
        if !changed {
            return live_out;
        }
    }
}

/// Bitmask of registers whose value is provably unobservable at the point
/// just before `f.blocks[block].instructions[offset]`.
pub(crate) fn dead_regs_at(f: &FunctionUnit, block: usize, offset: usize) -> u16 {
    let live_out = reg_live_out(f);
    let mut live = live_out[block];
    for instr in f.blocks[block].instructions[offset..].iter().rev() {
        let e = effects(instr);
        live = (live & !e.writes) | e.reads;
    }
    !live
}

fn flags_live_out(f: &FunctionUnit) -> Vec<bool> {
    let edges = f.edges().unwrap_or_default();
    let n = f.blocks.len();
    let mut live_in = vec![false; n];
    let mut live_out = vec![false; n];
    loop {
        let mut changed = false;
        for b in (0..n).rev() {
            let mut out = false;
            for &(s, t) in &edges {
                if s == b {
                    out |= live_in[t];
                }
            }
            let mut live = out;
            for instr in f.blocks[b].instructions.iter().rev() {
                let e = effects(instr);
                if e.reads_flags {
                    live = true;
                } else if e.writes_flags {
                    live = false;
                }
            }
            changed |= out != live_out[b] || live != live_in[b];
            live_out[b] = out;
            live_in[b] = live;
        }
        if !changed {
            return live_out;
        }
    }
}

/// True when no path from the given point reads flags before redefining
/// them. `offset` may equal the block length (the point after the block).
pub(crate) fn flags_dead_at(f: &FunctionUnit, block: usize, offset: usize) -> bool {
    let mut live = flags_live_out(f)[block];
    for instr in f.blocks[block].instructions[offset..].iter().rev() {
        let e = effects(instr);
        if e.reads_flags {
            live = true;
        } else if e.writes_flags {
            live = false;
        }
    }
    !live
}

fn conflicts(a: &Instruction, b: &Instruction) -> bool {
    let ea = effects(a);
    let eb = effects(b);
    if ea.writes & (eb.reads | eb.writes) != 0 || ea.reads & eb.writes != 0 {
        return true;
    }
    if ea.writes_flags && (eb.reads_flags || eb.writes_flags) || ea.reads_flags && eb.writes_flags {
        return true;
    }
    let mem_a = ea.reads_mem || ea.writes_mem;
    let mem_b = eb.reads_mem || eb.writes_mem;
    if ea.writes_mem && mem_b || mem_a && eb.writes_mem {
        return true;
    }
    // Call order is observable through the trace.
    ea.call && eb.call
}

// ---------------------------------------------------------------------------
// Junk template table
// ---------------------------------------------------------------------------

pub const JUNK_TEMPLATES_RAW: &str = include_str!("../data/junk_templates.txt");
/// FNV-1a of the shipped template file; guards against silent edits.
pub const JUNK_TEMPLATES_CHECKSUM: u64 = 0x9d8c_eb87_2555_41f8;

#[derive(Clone, Copy, Debug)]
enum TemplateOperand {
    PayloadReg,
    Imm(i64),
}

#[derive(Clone, Debug)]
struct TemplateLine {
    opcode: Opcode,
    operands: Vec<TemplateOperand>,
}

impl TemplateLine {
    fn instantiate(&self, rt: u8) -> Instruction {
        let operands = self
            .operands
            .iter()
            .map(|op| match op {
                TemplateOperand::PayloadReg => Operand::Reg(rt),
                TemplateOperand::Imm(v) => Operand::Imm(*v),
            })
            .collect();
        Instruction::new(self.opcode, operands)
    }
}

fn junk_templates() -> &'static [Vec<TemplateLine>] {
    static TABLE: OnceLock<Vec<Vec<TemplateLine>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::new();
        let mut current: Vec<TemplateLine> = Vec::new();
        for raw in JUNK_TEMPLATES_RAW.lines() {
            let line = raw.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !current.is_empty() {
                    table.push(std::mem::take(&mut current));
                }
                continue;
            }
            let cleaned = line.replace(',', " ");
            let mut parts = cleaned.split_whitespace();
            let opcode = Opcode::from_mnemonic(parts.next().expect("non-empty line"))
                .expect("template opcode");
            let operands = parts
                .map(|tok| {
                    if tok == "$R" {
                        TemplateOperand::PayloadReg
                    } else {
                        TemplateOperand::Imm(tok.parse().expect("template immediate"))
                    }
                })
                .collect();
            current.push(TemplateLine { opcode, operands });
        }
        if !current.is_empty() {
            table.push(current);
        }
        table
    })
}

pub fn junk_template_count() -> usize {
    junk_templates().len()
}

pub fn junk_template_len(id: usize) -> usize {
    junk_templates()[id].len()
}

// ---------------------------------------------------------------------------
// Perturbation types
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PerturbationKind {
    DeadBranch,
    BlockSplit,
    Reorder,
    EquivReplace,
}

impl PerturbationKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::DeadBranch => "dead-branch",
            PerturbationKind::BlockSplit => "block-split",
            PerturbationKind::Reorder => "reorder",
            PerturbationKind::EquivReplace => "equiv-replace",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum SwapDirection {
    WithPrevious,
    WithNext,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ReplaceRule {
    /// `mov r, 0` → `xor r, r` (flags must be dead after the site).
    MovZeroToXor,
    /// `xor r, r` → `mov r, 0` (same flags condition).
    XorSelfToMov,
    /// `add r, imm` → `sub r, -imm`.
    AddImmToSub,
    /// `sub r, imm` → `add r, -imm`.
    SubImmToAdd,
    /// `mul r, 2` → `shl r, 1`.
    MulTwoToShl,
    /// `shl r, 1` → `mul r, 2`.
    ShlOneToMul,
    /// Sandwich the site in `push r` / `pop r` for a register the site
    /// reads but does not write.
    PushPopWrap(u8),
}

/// Where a perturbation applies: block label plus instruction offset.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Site {
    pub block: String,
    pub offset: usize,
}

impl Site {
    pub fn new(block: impl Into<String>, offset: usize) -> Site {
        Site {
            block: block.into(),
            offset,
        }
    }

    pub fn from_global(f: &FunctionUnit, global: usize) -> Option<Site> {
        let (b, off) = f.locate(global)?;
        Some(Site::new(f.blocks[b].label.clone(), off))
    }

    pub fn resolve(&self, f: &FunctionUnit) -> Result<(usize, usize), PerturbError> {
        let out_of_range = || PerturbError::SiteOutOfRange {
            block: self.block.clone(),
            offset: self.offset,
        };
        let b = f.block_index(&self.block).ok_or_else(out_of_range)?;
        if self.offset >= f.blocks[b].instructions.len() {
            return Err(out_of_range());
        }
        Ok((b, self.offset))
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Payload {
    DeadBranch { template: usize },
    BlockSplit { offset: usize },
    Reorder { direction: SwapDirection },
    EquivReplace { rule: ReplaceRule },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Perturbation {
    pub site: Site,
    pub payload: Payload,
    /// RNG seed of the draw that produced this candidate.
    pub seed: u64,
}

impl Perturbation {
    pub fn kind(&self) -> PerturbationKind {
        match self.payload {
            Payload::DeadBranch { .. } => PerturbationKind::DeadBranch,
            Payload::BlockSplit { .. } => PerturbationKind::BlockSplit,
            Payload::Reorder { .. } => PerturbationKind::Reorder,
            Payload::EquivReplace { .. } => PerturbationKind::EquivReplace,
        }
    }

    /// Deduplication and ordering key; the provenance seed does not
    /// distinguish candidates.
    pub fn key(&self) -> (PerturbationKind, &Site, &Payload) {
        (self.kind(), &self.site, &self.payload)
    }

    /// Stable one-token rendering for trace rows.
    pub fn describe(&self) -> String {
        let payload = match &self.payload {
            Payload::DeadBranch { template } => format!("tpl{template}"),
            Payload::BlockSplit { offset } => format!("off{offset}"),
            Payload::Reorder { direction } => match direction {
                SwapDirection::WithPrevious => "prev".to_string(),
                SwapDirection::WithNext => "next".to_string(),
            },
            Payload::EquivReplace { rule } => match rule {
                ReplaceRule::MovZeroToXor => "mov0-xor".to_string(),
                ReplaceRule::XorSelfToMov => "xor-mov0".to_string(),
                ReplaceRule::AddImmToSub => "add-sub".to_string(),
                ReplaceRule::SubImmToAdd => "sub-add".to_string(),
                ReplaceRule::MulTwoToShl => "mul-shl".to_string(),
                ReplaceRule::ShlOneToMul => "shl-mul".to_string(),
                ReplaceRule::PushPopWrap(r) => format!("wrap-r{r}"),
            },
        };
        format!(
            "{}@{}:{}#{}",
            self.kind().name(),
            self.site.block,
            self.site.offset,
            payload
        )
    }

    /// Closed-form modification accounting for this candidate.
    pub fn expected_stats(&self, f: &FunctionUnit) -> Result<ModificationStats, PerturbError> {
        let (b, i) = self.site.resolve(f)?;
        Ok(match &self.payload {
            Payload::DeadBranch { template } => {
                let wrap = dead_regs_at(f, b, i) == 0;
                ModificationStats {
                    m_instrs: 2 + junk_template_len(*template) + 1 + if wrap { 2 } else { 0 },
                    m_nodes: 2,
                }
            }
            Payload::BlockSplit { .. } => ModificationStats {
                m_instrs: 1,
                m_nodes: 1,
            },
            Payload::Reorder { .. } => ModificationStats {
                m_instrs: 0,
                m_nodes: 0,
            },
            Payload::EquivReplace { rule } => ModificationStats {
                m_instrs: if matches!(rule, ReplaceRule::PushPopWrap(_)) {
                    2
                } else {
                    0
                },
                m_nodes: 0,
            },
        })
    }
}

/// §M-Instrs / M-Nodes: net instructions and basic blocks added.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct ModificationStats {
    pub m_instrs: usize,
    pub m_nodes: usize,
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

fn fresh_suffix(f: &FunctionUnit, prefixes: &[&str]) -> usize {
    let labels: BTreeSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
    (0..)
        .find(|n| {
            prefixes
                .iter()
                .all(|p| !labels.contains(format!("{p}{n}").as_str()))
        })
        .expect("some suffix is always free")
}

pub fn apply(f: &FunctionUnit, p: &Perturbation) -> Result<FunctionUnit, PerturbError> {
    let (b, i) = p.site.resolve(f)?;
    match &p.payload {
        Payload::DeadBranch { template } => apply_dead_branch(f, b, i, *template),
        Payload::BlockSplit { offset } => apply_block_split(f, b, *offset),
        Payload::Reorder { direction } => apply_reorder(f, b, i, *direction),
        Payload::EquivReplace { rule } => apply_equiv_replace(f, b, i, *rule),
    }
}

fn apply_dead_branch(
    f: &FunctionUnit,
    b: usize,
    i: usize,
    template: usize,
) -> Result<FunctionUnit, PerturbError> {
    if template >= junk_template_count() {
        return Err(PerturbError::InvalidPayload);
    }
    if !flags_dead_at(f, b, i) {
        return Err(PerturbError::FlagsLive);
    }
    let dead = dead_regs_at(f, b, i);
    let (rt, wrap) = match (0u8..16).find(|r| dead & (1 << r) != 0) {
        Some(r) => (r, false),
        None => (0, true),
    };
    let n = fresh_suffix(f, &["dead_", "cont_"]);
    let dead_label = format!("dead_{n}");
    let cont_label = format!("cont_{n}");

    let original = &f.blocks[b].instructions;
    let mut head = original[..i].to_vec();
    if wrap {
        head.push(Instruction::new(Opcode::Push, vec![Operand::Reg(rt)]));
    }
    head.push(Instruction::new(
        Opcode::Xor,
        vec![Operand::Reg(rt), Operand::Reg(rt)],
    ));
    head.push(Instruction::new(
        Opcode::Jne,
        vec![Operand::Label(dead_label.clone())],
    ));
    let mut cont = Vec::with_capacity(original.len() - i + 1);
    if wrap {
        cont.push(Instruction::new(Opcode::Pop, vec![Operand::Reg(rt)]));
    }
    cont.extend_from_slice(&original[i..]);
    let mut junk: Vec<Instruction> = junk_templates()[template]
        .iter()
        .map(|l| l.instantiate(rt))
        .collect();
    junk.push(Instruction::new(
        Opcode::Jmp,
        vec![Operand::Label(cont_label.clone())],
    ));

    let mut blocks = Vec::with_capacity(f.blocks.len() + 2);
    blocks.extend_from_slice(&f.blocks[..b]);
    blocks.push(BasicBlock::new(f.blocks[b].label.clone(), head));
    blocks.push(BasicBlock::new(cont_label, cont));
    blocks.extend_from_slice(&f.blocks[b + 1..]);
    blocks.push(BasicBlock::new(dead_label, junk));
    Ok(FunctionUnit::new(f.name.clone(), blocks))
}

fn apply_block_split(f: &FunctionUnit, b: usize, offset: usize) -> Result<FunctionUnit, PerturbError> {
    let len = f.blocks[b].instructions.len();
    if offset == 0 || offset >= len {
        return Err(PerturbError::InvalidPayload);
    }
    let n = fresh_suffix(f, &["split_"]);
    let split_label = format!("split_{n}");
    let mut head = f.blocks[b].instructions[..offset].to_vec();
    head.push(Instruction::new(
        Opcode::Jmp,
        vec![Operand::Label(split_label.clone())],
    ));
    let tail = f.blocks[b].instructions[offset..].to_vec();

    let mut blocks = Vec::with_capacity(f.blocks.len() + 1);
    blocks.extend_from_slice(&f.blocks[..b]);
    blocks.push(BasicBlock::new(f.blocks[b].label.clone(), head));
    blocks.push(BasicBlock::new(split_label, tail));
    blocks.extend_from_slice(&f.blocks[b + 1..]);
    Ok(FunctionUnit::new(f.name.clone(), blocks))
}

fn apply_reorder(
    f: &FunctionUnit,
    b: usize,
    i: usize,
    direction: SwapDirection,
) -> Result<FunctionUnit, PerturbError> {
    let instrs = &f.blocks[b].instructions;
    let j = match direction {
        SwapDirection::WithPrevious => i.checked_sub(1).ok_or(PerturbError::IllegalReorder)?,
        SwapDirection::WithNext => i,
    };
    if j + 1 >= instrs.len() {
        return Err(PerturbError::IllegalReorder);
    }
    if instrs[j].is_terminator() || instrs[j + 1].is_terminator() {
        return Err(PerturbError::IllegalReorder);
    }
    if conflicts(&instrs[j], &instrs[j + 1]) {
        return Err(PerturbError::IllegalReorder);
    }
    let mut out = f.clone();
    out.blocks[b].instructions.swap(j, j + 1);
    Ok(out)
}

fn apply_equiv_replace(
    f: &FunctionUnit,
    b: usize,
    i: usize,
    rule: ReplaceRule,
) -> Result<FunctionUnit, PerturbError> {
    let instr = &f.blocks[b].instructions[i];
    let flags_dead_after = || flags_dead_at(f, b, i + 1);
    let replaced = match rule {
        ReplaceRule::MovZeroToXor => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Mov, [Operand::Reg(r), Operand::Imm(0)]) if flags_dead_after() => {
                vec![Instruction::new(
                    Opcode::Xor,
                    vec![Operand::Reg(*r), Operand::Reg(*r)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::XorSelfToMov => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Xor, [Operand::Reg(a), Operand::Reg(b)]) if a == b && flags_dead_after() => {
                vec![Instruction::new(
                    Opcode::Mov,
                    vec![Operand::Reg(*a), Operand::Imm(0)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::AddImmToSub => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Add, [Operand::Reg(r), Operand::Imm(v)]) if *v != i64::MIN => {
                vec![Instruction::new(
                    Opcode::Sub,
                    vec![Operand::Reg(*r), Operand::Imm(-v)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::SubImmToAdd => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Sub, [Operand::Reg(r), Operand::Imm(v)]) if *v != i64::MIN => {
                vec![Instruction::new(
                    Opcode::Add,
                    vec![Operand::Reg(*r), Operand::Imm(-v)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::MulTwoToShl => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Mul, [Operand::Reg(r), Operand::Imm(2)]) => {
                vec![Instruction::new(
                    Opcode::Shl,
                    vec![Operand::Reg(*r), Operand::Imm(1)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::ShlOneToMul => match (instr.opcode, instr.operands.as_slice()) {
            (Opcode::Shl, [Operand::Reg(r), Operand::Imm(1)]) => {
                vec![Instruction::new(
                    Opcode::Mul,
                    vec![Operand::Reg(*r), Operand::Imm(2)],
                )]
            }
            _ => return Err(PerturbError::NoMatchingRule),
        },
        ReplaceRule::PushPopWrap(r) => {
            let e = effects(instr);
            let readable = r < 16
                && e.reads & (1 << r) != 0
                && e.writes & (1 << r) == 0
                && !e.reads_mem
                && !e.writes_mem
                && !instr.is_terminator();
            if !readable {
                return Err(PerturbError::NoMatchingRule);
            }
            vec![
                Instruction::new(Opcode::Push, vec![Operand::Reg(r)]),
                instr.clone(),
                Instruction::new(Opcode::Pop, vec![Operand::Reg(r)]),
            ]
        }
    };
    let mut out = f.clone();
    out.blocks[b].instructions.splice(i..=i, replaced);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sampling, validation, accounting
// ---------------------------------------------------------------------------

fn matching_rules(f: &FunctionUnit, b: usize, i: usize) -> Vec<ReplaceRule> {
    let mut fixed = vec![
        ReplaceRule::MovZeroToXor,
        ReplaceRule::XorSelfToMov,
        ReplaceRule::AddImmToSub,
        ReplaceRule::SubImmToAdd,
        ReplaceRule::MulTwoToShl,
        ReplaceRule::ShlOneToMul,
    ];
    fixed.extend((0u8..16).map(ReplaceRule::PushPopWrap));
    fixed
        .into_iter()
        .filter(|rule| apply_equiv_replace(f, b, i, *rule).is_ok())
        .collect()
}

fn legal_swaps(f: &FunctionUnit, b: usize, i: usize) -> Vec<SwapDirection> {
    [SwapDirection::WithPrevious, SwapDirection::WithNext]
        .into_iter()
        .filter(|d| apply_reorder(f, b, i, *d).is_ok())
        .collect()
}

/// `n` seeded draws over the kinds applicable at `site`, deduplicated and
/// ordered by (kind, site, payload).
pub fn sample_candidates(f: &FunctionUnit, site: &Site, n: usize, seed: u64) -> Vec<Perturbation> {
    let Ok((b, i)) = site.resolve(f) else {
        return Vec::new();
    };
    let dead_branch_ok = flags_dead_at(f, b, i);
    let block_len = f.blocks[b].instructions.len();
    let split_ok = block_len >= 2 && !f.blocks[b].instructions[..block_len - 1].is_empty();
    let swaps = legal_swaps(f, b, i);
    let rules = matching_rules(f, b, i);

    let mut kinds = Vec::new();
    if dead_branch_ok {
        kinds.push(PerturbationKind::DeadBranch);
    }
    if split_ok {
        kinds.push(PerturbationKind::BlockSplit);
    }
    if !swaps.is_empty() {
        kinds.push(PerturbationKind::Reorder);
    }
    if !rules.is_empty() {
        kinds.push(PerturbationKind::EquivReplace);
    }
    if kinds.is_empty() {
        return Vec::new();
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let payload = match kind {
            PerturbationKind::DeadBranch => Payload::DeadBranch {
                template: rng.gen_range(0..junk_template_count()),
            },
            PerturbationKind::BlockSplit => Payload::BlockSplit {
                offset: rng.gen_range(1..block_len),
            },
            PerturbationKind::Reorder => Payload::Reorder {
                direction: swaps[rng.gen_range(0..swaps.len())],
            },
            PerturbationKind::EquivReplace => Payload::EquivReplace {
                rule: rules[rng.gen_range(0..rules.len())],
            },
        };
        out.push(Perturbation {
            site: site.clone(),
            payload,
            seed,
        });
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    out.dedup_by(|a, b| a.key() == b.key());
    out
}

/// Dynamic oracle check; inconclusive results count as failures.
pub fn validate(f: &FunctionUnit, perturbed: &FunctionUnit, trials: usize, seed: u64) -> bool {
    matches!(
        semantic_equiv(f, perturbed, trials, seed),
        Equivalence::Equivalent
    )
}

pub fn diff_stats(f: &FunctionUnit, perturbed: &FunctionUnit) -> ModificationStats {
    ModificationStats {
        m_instrs: perturbed
            .instruction_count()
            .saturating_sub(f.instruction_count()),
        m_nodes: perturbed.blocks.len().saturating_sub(f.blocks.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_function;
    use crate::hash::fnv1a;

    fn f(src: &str) -> FunctionUnit {
        let f = parse_function(src).unwrap();
        f.validate().unwrap();
        f
    }

    #[test]
    fn template_table_shape_and_checksum() {
        assert_eq!(junk_template_count(), 8);
        for id in 0..8 {
            assert_eq!(junk_template_len(id), id + 1);
        }
        assert_eq!(fnv1a(JUNK_TEMPLATES_RAW.as_bytes()), JUNK_TEMPLATES_CHECKSUM);
    }

    #[test]
    fn dead_register_analysis_respects_exit_liveness() {
        // r2 is clobbered before ret, everything else flows out.
        let g = f("fn g:\nentry:\n  add r1, 2\n  mov r2, 0\n  ret\n");
        let dead = dead_regs_at(&g, 0, 0);
        assert_ne!(dead & (1 << 2), 0);
        assert_eq!(dead & (1 << 1), 0);
        assert_eq!(dead & (1 << 7), 0);
    }

    #[test]
    fn flags_are_live_between_cmp_and_consumer() {
        let g = f("fn g:\nentry:\n  cmp r1, 0\n  mov r2, 0\n  je out\nmid:\n  nop\nout:\n  ret\n");
        assert!(!flags_dead_at(&g, 0, 1));
        assert!(flags_dead_at(&g, 0, 0));
        assert!(flags_dead_at(&g, 1, 0));
    }

    #[test]
    fn dead_branch_with_len4_junk_adds_seven_instrs_two_nodes() {
        let g = f("fn g:\nentry:\n  mov r1, 5\n  add r1, 2\n  mov r2, 0\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 1),
            payload: Payload::DeadBranch { template: 3 },
            seed: 0,
        };
        let out = apply(&g, &p).unwrap();
        out.validate().unwrap();
        let stats = diff_stats(&g, &out);
        assert_eq!(stats, ModificationStats { m_instrs: 7, m_nodes: 2 });
        assert_eq!(stats, p.expected_stats(&g).unwrap());
        assert!(validate(&g, &out, 32, 11));
    }

    #[test]
    fn dead_branch_wraps_when_every_register_is_live() {
        let g = f("fn g:\nentry:\n  add r1, 1\n  ret\n");
        assert_eq!(dead_regs_at(&g, 0, 0), 0);
        let p = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::DeadBranch { template: 0 },
            seed: 0,
        };
        let out = apply(&g, &p).unwrap();
        out.validate().unwrap();
        assert_eq!(
            diff_stats(&g, &out),
            ModificationStats { m_instrs: 6, m_nodes: 2 } // 2 + 1 + 1 + push/pop
        );
        assert!(validate(&g, &out, 32, 3));
    }

    #[test]
    fn dead_branch_refused_when_flags_live() {
        let g = f("fn g:\nentry:\n  cmp r1, 0\n  mov r2, 0\n  je out\nmid:\n  nop\nout:\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 1),
            payload: Payload::DeadBranch { template: 0 },
            seed: 0,
        };
        assert_eq!(apply(&g, &p), Err(PerturbError::FlagsLive));
    }

    #[test]
    fn taken_opaque_branch_is_caught_by_the_oracle() {
        let base = f("fn g:\nentry:\n  add r1, 1\n  ret\n");
        // Hand-broken transform: je instead of jne, junk on a live register.
        let broken = f(
            "fn g:\nentry:\n  xor r1, r1\n  je dead_0\ncont_0:\n  add r1, 1\n  ret\ndead_0:\n  add r1, 9\n  jmp cont_0\n",
        );
        assert!(!validate(&base, &broken, 32, 5));
    }

    #[test]
    fn block_split_adds_one_block_one_edge_one_instr() {
        let g = f("fn g:\nentry:\n  mov r1, 5\n  add r1, 2\n  mov r2, 0\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 2),
            payload: Payload::BlockSplit { offset: 2 },
            seed: 0,
        };
        let out = apply(&g, &p).unwrap();
        out.validate().unwrap();
        assert_eq!(out.blocks.len(), g.blocks.len() + 1);
        assert_eq!(out.edges().unwrap().len(), g.edges().unwrap().len() + 1);
        assert_eq!(out.instruction_count(), g.instruction_count() + 1);
        assert!(validate(&g, &out, 32, 7));
    }

    #[test]
    fn reorder_across_raw_dependency_is_rejected() {
        let g = f("fn g:\nentry:\n  add r1, r2\n  mov r3, r1\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::Reorder { direction: SwapDirection::WithNext },
            seed: 0,
        };
        assert_eq!(apply(&g, &p), Err(PerturbError::IllegalReorder));
    }

    #[test]
    fn legal_reorder_is_involutive_and_equivalent() {
        let g = f("fn g:\nentry:\n  mov r1, 1\n  mov r2, 2\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::Reorder { direction: SwapDirection::WithNext },
            seed: 0,
        };
        let once = apply(&g, &p).unwrap();
        assert_ne!(once, g);
        assert!(validate(&g, &once, 32, 2));
        let twice = apply(&once, &p).unwrap();
        assert_eq!(twice, g);
    }

    #[test]
    fn cmp_and_its_jump_are_an_unbreakable_pair() {
        let g = f("fn g:\nentry:\n  cmp r1, 0\n  je out\nmid:\n  nop\nout:\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::Reorder { direction: SwapDirection::WithNext },
            seed: 0,
        };
        assert_eq!(apply(&g, &p), Err(PerturbError::IllegalReorder));
    }

    #[test]
    fn mov_zero_xor_round_trip() {
        let g = f("fn g:\nentry:\n  mov r1, 0\n  add r2, 3\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::EquivReplace { rule: ReplaceRule::MovZeroToXor },
            seed: 0,
        };
        let out = apply(&g, &p).unwrap();
        assert_eq!(out.blocks[0].instructions[0].render(), "xor r1, r1");
        assert!(validate(&g, &out, 32, 9));
        let back = apply(
            &out,
            &Perturbation {
                site: Site::new("entry", 0),
                payload: Payload::EquivReplace { rule: ReplaceRule::XorSelfToMov },
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mov_zero_to_xor_refused_when_flags_live_after() {
        let g = f("fn g:\nentry:\n  cmp r1, 0\n  mov r2, 0\n  je out\nmid:\n  nop\nout:\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 1),
            payload: Payload::EquivReplace { rule: ReplaceRule::MovZeroToXor },
            seed: 0,
        };
        assert_eq!(apply(&g, &p), Err(PerturbError::NoMatchingRule));
    }

    #[test]
    fn arithmetic_rewrites_validate() {
        let g = f("fn g:\nentry:\n  add r1, 7\n  mul r2, 2\n  shl r3, 1\n  sub r4, -9\n  ret\n");
        let cases = [
            (0usize, ReplaceRule::AddImmToSub, "sub r1, -7"),
            (1, ReplaceRule::MulTwoToShl, "shl r2, 1"),
            (2, ReplaceRule::ShlOneToMul, "mul r3, 2"),
            (3, ReplaceRule::SubImmToAdd, "add r4, 9"),
        ];
        for (offset, rule, rendered) in cases {
            let p = Perturbation {
                site: Site::new("entry", offset),
                payload: Payload::EquivReplace { rule },
                seed: 0,
            };
            let out = apply(&g, &p).unwrap();
            assert_eq!(out.blocks[0].instructions[offset].render(), rendered);
            assert!(validate(&g, &out, 32, offset as u64), "{rendered}");
        }
    }

    #[test]
    fn push_pop_wrap_needs_a_read_only_register() {
        let g = f("fn g:\nentry:\n  add r1, r2\n  ret\n");
        let ok = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::EquivReplace { rule: ReplaceRule::PushPopWrap(2) },
            seed: 0,
        };
        let out = apply(&g, &ok).unwrap();
        assert_eq!(out.instruction_count(), g.instruction_count() + 2);
        assert!(validate(&g, &out, 32, 4));
        assert_eq!(diff_stats(&g, &out), ok.expected_stats(&g).unwrap());
        // r1 is written by the site, so wrapping it would undo the add.
        let bad = Perturbation {
            site: Site::new("entry", 0),
            payload: Payload::EquivReplace { rule: ReplaceRule::PushPopWrap(1) },
            seed: 0,
        };
        assert_eq!(apply(&g, &bad), Err(PerturbError::NoMatchingRule));
    }

    #[test]
    fn sampling_is_deterministic_and_deduplicated() {
        let g = f("fn g:\nentry:\n  mov r1, 5\n  add r1, 2\n  mov r2, 0\n  ret\n");
        let site = Site::new("entry", 1);
        let a = sample_candidates(&g, &site, 300, 42);
        let b = sample_candidates(&g, &site, 300, 42);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for w in a.windows(2) {
            assert!(w[0].key() < w[1].key());
        }
        let c = sample_candidates(&g, &site, 300, 43);
        assert!(c != a || a.len() < 300); // different seed reshuffles the draw
    }

    #[test]
    fn inapplicable_kinds_are_filtered() {
        // mov r1, 6 is boxed in by write-write/read-write conflicts, reads
        // nothing and matches no rewrite rule.
        let g = f("fn g:\nentry:\n  mov r1, 5\n  mov r1, 6\n  add r1, r1\n  ret\n");
        let cands = sample_candidates(&g, &Site::new("entry", 1), 400, 1);
        assert!(!cands.is_empty());
        let kinds: BTreeSet<PerturbationKind> = cands.iter().map(|p| p.kind()).collect();
        assert!(kinds.contains(&PerturbationKind::DeadBranch));
        assert!(kinds.contains(&PerturbationKind::BlockSplit));
        assert!(!kinds.contains(&PerturbationKind::Reorder));
        assert!(!kinds.contains(&PerturbationKind::EquivReplace));
    }

    #[test]
    fn sampled_candidates_are_sound() {
        let g = f(
            "fn g:\nentry:\n  mov r1, 5\n  add r1, 7\n  cmp r1, 12\n  je done\nbody:\n  mul r1, 2\n  mov r2, 0\n  store [r1+0], r1\n  call helper\ndone:\n  mov r3, 1\n  ret\n",
        );
        for site in [Site::new("entry", 1), Site::new("body", 0), Site::new("done", 0)] {
            for p in sample_candidates(&g, &site, 64, 77) {
                let out = apply(&g, &p).unwrap_or_else(|e| panic!("{site:?} {p:?}: {e}"));
                out.validate().unwrap();
                assert!(validate(&g, &out, 16, 5), "{p:?}");
                assert_eq!(diff_stats(&g, &out), p.expected_stats(&g).unwrap(), "{p:?}");
            }
        }
    }

    #[test]
    fn out_of_range_site_errors() {
        let g = f("fn g:\nentry:\n  ret\n");
        let p = Perturbation {
            site: Site::new("entry", 4),
            payload: Payload::BlockSplit { offset: 1 },
            seed: 0,
        };
        assert!(matches!(apply(&g, &p), Err(PerturbError::SiteOutOfRange { .. })));
        assert!(sample_candidates(&g, &Site::new("nope", 0), 10, 0).is_empty());
    }
}
