//! The toy ISA: function representation, parsing, serialization and the
//! interpreter that backs the semantic-equivalence oracle.
//!
//! A [`FunctionUnit`] is a list of labeled basic blocks over a 16-register
//! machine. Only the last instruction of a block may transfer control;
//! blocks without an explicit terminator fall through to the next block in
//! order. Values are immutable after construction, so functions can be
//! shared freely across threads.

mod equiv;
mod interp;
pub mod isa;
mod parser;

pub use equiv::{semantic_equiv, Counterexample, Equivalence};
pub use interp::{execute, CallRecord, ExecError, MachineState, DEFAULT_STEP_CAP};
pub use isa::{Opcode, OperandSlot};
pub use parser::parse_function;

use std::fmt;
use thiserror::Error;

/// One instruction operand.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Operand {
    /// Register `r0`..`r15`.
    Reg(u8),
    /// Signed 64-bit immediate.
    Imm(i64),
    /// Memory reference `[rB+off]`.
    Mem { base: u8, offset: i32 },
    /// Jump target label.
    Label(String),
    /// Named string constant, written `@name`.
    Str(String),
    /// Callee name.
    Func(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "r{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
            Operand::Mem { base, offset } => {
                if *offset < 0 {
                    write!(f, "[r{base}-{}]", offset.unsigned_abs())
                } else {
                    write!(f, "[r{base}+{offset}]")
                }
            }
            Operand::Label(l) => f.write_str(l),
            Operand::Str(s) => write!(f, "@{s}"),
            Operand::Func(n) => f.write_str(n),
        }
    }
}

/// One instruction. `text` keeps the verbatim source slice when the
/// instruction came from the parser; it is ignored by equality so that
/// parse/serialize round trips compare structurally.
#[derive(Clone, Debug)]
pub struct Instruction {
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
    pub text: String,
}

impl Instruction {
    pub fn new(opcode: Opcode, operands: Vec<Operand>) -> Instruction {
        Instruction {
            opcode,
            operands,
            text: String::new(),
        }
    }

    pub fn is_terminator(&self) -> bool {
        self.opcode.is_terminator()
    }

    /// Render in canonical source form.
    pub fn render(&self) -> String {
        if self.operands.is_empty() {
            self.opcode.mnemonic().to_string()
        } else {
            let ops: Vec<String> = self.operands.iter().map(|o| o.to_string()).collect();
            format!("{} {}", self.opcode, ops.join(", "))
        }
    }
}

impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.opcode == other.opcode && self.operands == other.operands
    }
}
impl Eq for Instruction {}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// How a block hands off control.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Terminator<'a> {
    Jump(&'a str),
    /// `je`/`jne`: taken edge to `target`, fallthrough to the next block.
    CondJump { opcode: Opcode, target: &'a str },
    Ret,
    /// No explicit terminator; control continues with the next block.
    FallThrough,
}

/// A labeled basic block. Non-empty; only the final instruction may be a
/// control transfer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, instructions: Vec<Instruction>) -> BasicBlock {
        BasicBlock {
            label: label.into(),
            instructions,
        }
    }

    pub fn terminator(&self) -> Terminator<'_> {
        match self.instructions.last() {
            Some(i) => match i.opcode {
                Opcode::Jmp => match &i.operands[0] {
                    Operand::Label(l) => Terminator::Jump(l),
                    _ => unreachable!("jmp operand is always a label"),
                },
                Opcode::Je | Opcode::Jne => match &i.operands[0] {
                    Operand::Label(l) => Terminator::CondJump {
                        opcode: i.opcode,
                        target: l,
                    },
                    _ => unreachable!("conditional jump operand is always a label"),
                },
                Opcode::Ret => Terminator::Ret,
                _ => Terminator::FallThrough,
            },
            None => Terminator::FallThrough,
        }
    }
}

/// A parsed function: the unit of embedding, explanation and attack.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FunctionUnit {
    pub name: String,
    /// Blocks in source order; the first block is the entry.
    pub blocks: Vec<BasicBlock>,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}, col {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },
    #[error("line {line}: `{opcode}` expects {expected} operand(s), got {got}")]
    ArityMismatch {
        line: usize,
        opcode: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: operand {index} of `{opcode}` has the wrong kind")]
    OperandKind {
        line: usize,
        opcode: String,
        index: usize,
    },
    #[error("undefined label `{label}` in function `{function}`")]
    UndefinedLabel { function: String, label: String },
    #[error("duplicate label `{label}`")]
    DuplicateLabel { label: String },
    #[error("block `{label}` is unreachable from the entry")]
    UnreachableBlock { label: String },
    #[error("block `{label}` is empty")]
    EmptyBlock { label: String },
    #[error("block `{label}`: control transfer before the end of the block")]
    MisplacedTerminator { label: String },
    #[error("block `{label}` falls through past the end of the function")]
    MissingFallthrough { label: String },
    #[error("register index {index} out of range (0..=15)")]
    RegisterRange { index: u32 },
    #[error("function has no blocks")]
    NoBlocks,
}

impl FunctionUnit {
    pub fn new(name: impl Into<String>, blocks: Vec<BasicBlock>) -> FunctionUnit {
        FunctionUnit {
            name: name.into(),
            blocks,
        }
    }

    pub fn entry_label(&self) -> &str {
        &self.blocks[0].label
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    /// Iterate instructions in block order with their global index.
    pub fn instructions(&self) -> impl Iterator<Item = (usize, usize, usize, &Instruction)> {
        let mut global = 0usize;
        self.blocks.iter().enumerate().flat_map(move |(bi, b)| {
            let start = global;
            global += b.instructions.len();
            b.instructions
                .iter()
                .enumerate()
                .map(move |(off, i)| (start + off, bi, off, i))
        })
    }

    /// Map a global instruction index to (block index, offset).
    pub fn locate(&self, global: usize) -> Option<(usize, usize)> {
        let mut remaining = global;
        for (bi, b) in self.blocks.iter().enumerate() {
            if remaining < b.instructions.len() {
                return Some((bi, remaining));
            }
            remaining -= b.instructions.len();
        }
        None
    }

    /// Global indices of block terminator instructions (explicit ones only).
    pub fn terminator_indices(&self) -> Vec<usize> {
        self.instructions()
            .filter(|(_, _, _, i)| i.is_terminator())
            .map(|(g, _, _, _)| g)
            .collect()
    }

    /// Directed edges implied by terminators, as (source, target) block
    /// indices. Order: source block order, taken edge before fallthrough.
    pub fn edges(&self) -> Result<Vec<(usize, usize)>, AsmError> {
        let mut edges = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            let target = |label: &str| -> Result<usize, AsmError> {
                self.block_index(label).ok_or_else(|| AsmError::UndefinedLabel {
                    function: self.name.clone(),
                    label: label.to_string(),
                })
            };
            match block.terminator() {
                Terminator::Jump(l) => edges.push((bi, target(l)?)),
                Terminator::CondJump { target: l, .. } => {
                    edges.push((bi, target(l)?));
                    if bi + 1 >= self.blocks.len() {
                        return Err(AsmError::MissingFallthrough {
                            label: block.label.clone(),
                        });
                    }
                    edges.push((bi, bi + 1));
                }
                Terminator::Ret => {}
                Terminator::FallThrough => {
                    if bi + 1 >= self.blocks.len() {
                        return Err(AsmError::MissingFallthrough {
                            label: block.label.clone(),
                        });
                    }
                    edges.push((bi, bi + 1));
                }
            }
        }
        Ok(edges)
    }

    /// Check every structural invariant: non-empty reachable blocks, unique
    /// labels, defined targets, terminators only in final position.
    pub fn validate(&self) -> Result<(), AsmError> {
        if self.blocks.is_empty() {
            return Err(AsmError::NoBlocks);
        }
        let mut seen = std::collections::BTreeSet::new();
        for block in &self.blocks {
            if !seen.insert(block.label.as_str()) {
                return Err(AsmError::DuplicateLabel {
                    label: block.label.clone(),
                });
            }
            if block.instructions.is_empty() {
                return Err(AsmError::EmptyBlock {
                    label: block.label.clone(),
                });
            }
            for (idx, instr) in block.instructions.iter().enumerate() {
                if instr.is_terminator() && idx + 1 != block.instructions.len() {
                    return Err(AsmError::MisplacedTerminator {
                        label: block.label.clone(),
                    });
                }
                for op in &instr.operands {
                    match op {
                        Operand::Reg(r) | Operand::Mem { base: r, .. } if *r > 15 => {
                            return Err(AsmError::RegisterRange { index: *r as u32 })
                        }
                        _ => {}
                    }
                }
            }
        }
        let edges = self.edges()?;
        // Reachability from the entry block.
        let mut reachable = vec![false; self.blocks.len()];
        let mut stack = vec![0usize];
        reachable[0] = true;
        while let Some(b) = stack.pop() {
            for &(s, t) in &edges {
                if s == b && !reachable[t] {
                    reachable[t] = true;
                    stack.push(t);
                }
            }
        }
        for (bi, r) in reachable.iter().enumerate() {
            if !r {
                return Err(AsmError::UnreachableBlock {
                    label: self.blocks[bi].label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Canonical source form; inverse of [`parse_function`] up to
    /// whitespace normalization.
    pub fn serialize(&self) -> String {
        let mut out = format!("fn {}:\n", self.name);
        for block in &self.blocks {
            out.push_str(&block.label);
            out.push_str(":\n");
            for instr in &block.instructions {
                out.push_str("  ");
                out.push_str(&instr.render());
                out.push('\n');
            }
        }
        out
    }
}

impl fmt::Display for FunctionUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instr(op: Opcode, operands: Vec<Operand>) -> Instruction {
        Instruction::new(op, operands)
    }

    #[test]
    fn terminator_kinds() {
        let b = BasicBlock::new("b", vec![instr(Opcode::Ret, vec![])]);
        assert_eq!(b.terminator(), Terminator::Ret);
        let b = BasicBlock::new(
            "b",
            vec![instr(Opcode::Jmp, vec![Operand::Label("x".into())])],
        );
        assert_eq!(b.terminator(), Terminator::Jump("x"));
        let b = BasicBlock::new("b", vec![instr(Opcode::Nop, vec![])]);
        assert_eq!(b.terminator(), Terminator::FallThrough);
    }

    #[test]
    fn validate_rejects_duplicate_label() {
        let f = FunctionUnit::new(
            "f",
            vec![
                BasicBlock::new("a", vec![instr(Opcode::Nop, vec![])]),
                BasicBlock::new("a", vec![instr(Opcode::Ret, vec![])]),
            ],
        );
        assert!(matches!(f.validate(), Err(AsmError::DuplicateLabel { .. })));
    }

    #[test]
    fn validate_rejects_unreachable_block() {
        let f = FunctionUnit::new(
            "f",
            vec![
                BasicBlock::new("entry", vec![instr(Opcode::Ret, vec![])]),
                BasicBlock::new("orphan", vec![instr(Opcode::Ret, vec![])]),
            ],
        );
        assert!(matches!(
            f.validate(),
            Err(AsmError::UnreachableBlock { .. })
        ));
    }

    #[test]
    fn validate_rejects_fallthrough_off_the_end() {
        let f = FunctionUnit::new(
            "f",
            vec![BasicBlock::new("entry", vec![instr(Opcode::Nop, vec![])])],
        );
        assert!(matches!(
            f.validate(),
            Err(AsmError::MissingFallthrough { .. })
        ));
    }

    #[test]
    fn cond_jump_edges_taken_before_fallthrough() {
        let f = FunctionUnit::new(
            "f",
            vec![
                BasicBlock::new(
                    "entry",
                    vec![
                        instr(Opcode::Cmp, vec![Operand::Reg(0), Operand::Imm(0)]),
                        instr(Opcode::Je, vec![Operand::Label("then".into())]),
                    ],
                ),
                BasicBlock::new("else", vec![instr(Opcode::Ret, vec![])]),
                BasicBlock::new("then", vec![instr(Opcode::Ret, vec![])]),
            ],
        );
        f.validate().unwrap();
        assert_eq!(f.edges().unwrap(), vec![(0, 2), (0, 1)]);
    }

    #[test]
    fn global_indexing_round_trip() {
        let f = FunctionUnit::new(
            "f",
            vec![
                BasicBlock::new(
                    "entry",
                    vec![
                        instr(Opcode::Nop, vec![]),
                        instr(Opcode::Jmp, vec![Operand::Label("end".into())]),
                    ],
                ),
                BasicBlock::new("end", vec![instr(Opcode::Ret, vec![])]),
            ],
        );
        assert_eq!(f.instruction_count(), 3);
        assert_eq!(f.locate(2), Some((1, 0)));
        assert_eq!(f.locate(3), None);
        assert_eq!(f.terminator_indices(), vec![1, 2]);
    }
}
