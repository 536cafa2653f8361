//! Exact interpreter for the toy ISA.
//!
//! Calls are uninterpreted: each one appends `(callee, r0..r3)` to the call
//! trace and sets `r0` to a stable hash of the pair, so downstream dataflow
//! still depends on the call. Arithmetic is wrapping. The comparison flag is
//! set by `cmp` and by every arithmetic instruction (result compared against
//! zero); reading it before it is defined is an execution error.

use super::{FunctionUnit, Instruction, Opcode, Operand};
use crate::hash::{fnv1a_mixed, fnv1a_str};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_STEP_CAP: u64 = 100_000;

/// Stack pointer start; far away from the small offsets used by `[r+off]`.
const STACK_BASE: i64 = 1 << 40;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CallRecord {
    pub callee: String,
    pub args: [i64; 4],
}

/// Full machine state; the oracle compares registers, memory and the call
/// trace of two runs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MachineState {
    pub regs: [i64; 16],
    pub memory: BTreeMap<i64, i64>,
    pub strings: BTreeMap<String, Vec<u8>>,
    pub trace: Vec<CallRecord>,
    pub flags: Option<Ordering>,
    pub steps: u64,
    sp: i64,
}

impl Default for MachineState {
    fn default() -> Self {
        MachineState {
            regs: [0; 16],
            memory: BTreeMap::new(),
            strings: BTreeMap::new(),
            trace: Vec::new(),
            flags: None,
            steps: 0,
            sp: STACK_BASE,
        }
    }
}

impl MachineState {
    pub fn with_regs(regs: [i64; 16]) -> MachineState {
        MachineState {
            regs,
            ..MachineState::default()
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("step cap of {cap} exceeded in `{function}`")]
    StepCapExceeded { function: String, cap: u64 },
    #[error("`{instr}` reads the comparison flag before any cmp defined it")]
    UndefinedFlags { instr: String },
    #[error("jump to undefined label `{label}`")]
    BadLabel { label: String },
}

/// Address of a named string constant; derived from the name only, so it is
/// identical across functions.
pub fn string_address(name: &str) -> i64 {
    // Keep clear of the stack region and of small [r+off] addresses.
    ((fnv1a_str(name) >> 2) as i64) | (1 << 45)
}

fn operand_value(op: &Operand, state: &MachineState) -> i64 {
    match op {
        Operand::Reg(r) => state.regs[*r as usize],
        Operand::Imm(v) => *v,
        Operand::Mem { base, offset } => {
            let addr = state.regs[*base as usize].wrapping_add(*offset as i64);
            state.memory.get(&addr).copied().unwrap_or(0)
        }
        Operand::Str(name) => string_address(name),
        Operand::Label(_) | Operand::Func(_) => 0,
    }
}

fn mem_address(op: &Operand, state: &MachineState) -> i64 {
    match op {
        Operand::Mem { base, offset } => state.regs[*base as usize].wrapping_add(*offset as i64),
        _ => unreachable!("checked by the parser"),
    }
}

/// Run `f` to completion (`ret` or falling past the last block is impossible
/// on validated functions) from `input`, or fail on the step cap / undefined
/// flags.
pub fn execute(
    f: &FunctionUnit,
    input: MachineState,
    step_cap: u64,
) -> Result<MachineState, ExecError> {
    debug_assert!(step_cap > 0);
    let mut state = input;
    let mut block_idx = 0usize;
    'blocks: loop {
        let block = &f.blocks[block_idx];
        for instr in &block.instructions {
            state.steps += 1;
            if state.steps > step_cap {
                return Err(ExecError::StepCapExceeded {
                    function: f.name.clone(),
                    cap: step_cap,
                });
            }
            match step(f, instr, &mut state)? {
                Flow::Next => {}
                Flow::Goto(idx) => {
                    block_idx = idx;
                    continue 'blocks;
                }
                Flow::Halt => return Ok(state),
            }
        }
        // Implicit fallthrough; validation guarantees a next block exists.
        block_idx += 1;
    }
}

enum Flow {
    Next,
    Goto(usize),
    Halt,
}

fn step(f: &FunctionUnit, instr: &Instruction, state: &mut MachineState) -> Result<Flow, ExecError> {
    let ops = &instr.operands;
    match instr.opcode {
        Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Xor | Opcode::And | Opcode::Or
        | Opcode::Shl | Opcode::Shr => {
            let dst = reg_index(&ops[0]);
            let lhs = state.regs[dst];
            let rhs = operand_value(&ops[1], state);
            let result = match instr.opcode {
                Opcode::Add => lhs.wrapping_add(rhs),
                Opcode::Sub => lhs.wrapping_sub(rhs),
                Opcode::Mul => lhs.wrapping_mul(rhs),
                Opcode::Xor => lhs ^ rhs,
                Opcode::And => lhs & rhs,
                Opcode::Or => lhs | rhs,
                Opcode::Shl => lhs.wrapping_shl(rhs as u32 & 63),
                Opcode::Shr => ((lhs as u64).wrapping_shr(rhs as u32 & 63)) as i64,
                _ => unreachable!(),
            };
            state.regs[dst] = result;
            state.flags = Some(result.cmp(&0));
        }
        Opcode::Mov | Opcode::Load => {
            let dst = reg_index(&ops[0]);
            state.regs[dst] = operand_value(&ops[1], state);
        }
        Opcode::Store => {
            let addr = mem_address(&ops[0], state);
            let value = state.regs[reg_index(&ops[1])];
            state.memory.insert(addr, value);
        }
        Opcode::Push => {
            state.sp = state.sp.wrapping_sub(8);
            state.memory.insert(state.sp, state.regs[reg_index(&ops[0])]);
        }
        Opcode::Pop => {
            // Remove the cell so a push/pop pair restores memory exactly.
            let value = state.memory.remove(&state.sp).unwrap_or(0);
            state.regs[reg_index(&ops[0])] = value;
            state.sp = state.sp.wrapping_add(8);
        }
        Opcode::Cmp => {
            let lhs = state.regs[reg_index(&ops[0])];
            let rhs = operand_value(&ops[1], state);
            state.flags = Some(lhs.cmp(&rhs));
        }
        Opcode::Jmp => return Ok(Flow::Goto(target_index(f, &ops[0])?)),
        Opcode::Je | Opcode::Jne => {
            let flags = state.flags.ok_or_else(|| ExecError::UndefinedFlags {
                instr: instr.render(),
            })?;
            let taken = match instr.opcode {
                Opcode::Je => flags == Ordering::Equal,
                _ => flags != Ordering::Equal,
            };
            if taken {
                return Ok(Flow::Goto(target_index(f, &ops[0])?));
            }
        }
        Opcode::Call => {
            let callee = match &ops[0] {
                Operand::Func(n) => n.clone(),
                _ => unreachable!("checked by the parser"),
            };
            let args = [state.regs[0], state.regs[1], state.regs[2], state.regs[3]];
            state.regs[0] = fnv1a_mixed(&callee, &args) as i64;
            state.trace.push(CallRecord { callee, args });
        }
        Opcode::Ret => return Ok(Flow::Halt),
        Opcode::Nop => {}
    }
    Ok(Flow::Next)
}

fn reg_index(op: &Operand) -> usize {
    match op {
        Operand::Reg(r) => *r as usize,
        _ => unreachable!("checked by the parser"),
    }
}

fn target_index(f: &FunctionUnit, op: &Operand) -> Result<usize, ExecError> {
    match op {
        Operand::Label(l) => f.block_index(l).ok_or_else(|| ExecError::BadLabel {
            label: l.clone(),
        }),
        _ => unreachable!("checked by the parser"),
    }
}
