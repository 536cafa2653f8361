//! Opcode table for the toy ISA.
//!
//! The instruction set is deliberately small: enough arithmetic, data
//! transfer and control flow to give every feature extractor something to
//! count, while staying exactly interpretable.

use std::fmt;

/// Every opcode the parser and interpreter understand.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Opcode {
    // arithmetic
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
    Shr,
    // transfer
    Mov,
    Load,
    Store,
    Push,
    Pop,
    // control
    Cmp,
    Jmp,
    Je,
    Jne,
    Call,
    Ret,
    // misc
    Nop,
}

/// What a single operand slot accepts.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OperandSlot {
    Reg,
    RegOrImm,
    /// mov sources: register, immediate, memory or string constant.
    RegImmMemStr,
    Mem,
    Label,
    Func,
}

impl Opcode {
    pub const ALL: [Opcode; 20] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Xor,
        Opcode::And,
        Opcode::Or,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Mov,
        Opcode::Load,
        Opcode::Store,
        Opcode::Push,
        Opcode::Pop,
        Opcode::Cmp,
        Opcode::Jmp,
        Opcode::Je,
        Opcode::Jne,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Nop,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Xor => "xor",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Shl => "shl",
            Opcode::Shr => "shr",
            Opcode::Mov => "mov",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Push => "push",
            Opcode::Pop => "pop",
            Opcode::Cmp => "cmp",
            Opcode::Jmp => "jmp",
            Opcode::Je => "je",
            Opcode::Jne => "jne",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Nop => "nop",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| op.mnemonic() == s)
    }

    /// Operand slots in order; parser enforces both count and kind.
    pub fn operand_slots(self) -> &'static [OperandSlot] {
        use OperandSlot::*;
        match self {
            Opcode::Add
            | Opcode::Sub
            | Opcode::Mul
            | Opcode::Xor
            | Opcode::And
            | Opcode::Or
            | Opcode::Shl
            | Opcode::Shr
            | Opcode::Cmp => &[Reg, RegOrImm],
            Opcode::Mov => &[Reg, RegImmMemStr],
            Opcode::Load => &[Reg, Mem],
            Opcode::Store => &[Mem, Reg],
            Opcode::Push | Opcode::Pop => &[Reg],
            Opcode::Jmp | Opcode::Je | Opcode::Jne => &[Label],
            Opcode::Call => &[Func],
            Opcode::Ret | Opcode::Nop => &[],
        }
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Xor
                | Opcode::And
                | Opcode::Or
                | Opcode::Shl
                | Opcode::Shr
        )
    }

    pub fn is_transfer(self) -> bool {
        matches!(
            self,
            Opcode::Mov | Opcode::Load | Opcode::Store | Opcode::Push | Opcode::Pop
        )
    }

    pub fn is_control(self) -> bool {
        matches!(
            self,
            Opcode::Cmp | Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Ret
        )
    }

    /// Instructions that end a basic block when they appear.
    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Ret)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnemonic_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
        assert_eq!(Opcode::from_mnemonic("bogus"), None);
    }

    #[test]
    fn class_partition() {
        for op in Opcode::ALL {
            let classes = [
                op.is_arithmetic(),
                op.is_transfer(),
                op == Opcode::Call,
                op.is_control(),
                op == Opcode::Nop,
            ];
            assert_eq!(classes.iter().filter(|c| **c).count(), 1, "{op}");
        }
    }
}
