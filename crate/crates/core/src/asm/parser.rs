//! Line-oriented parser for `.basm` sources.
//!
//! Grammar:
//! ```text
//! function := "fn" IDENT ":" NEWLINE block+
//! block    := IDENT ":" NEWLINE instr+
//! instr    := OPCODE operand ("," operand)* NEWLINE
//! operand  := "r" INT | INT | "[" "r" INT ("+"|"-") INT "]" | "@" IDENT | IDENT
//! ```
//! Comments start with `;` and run to end of line. One function per file.

use super::isa::{Opcode, OperandSlot};
use super::{AsmError, BasicBlock, FunctionUnit, Instruction, Operand};

pub fn parse_function(text: &str) -> Result<FunctionUnit, AsmError> {
    let mut name: Option<String> = None;
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut current: Option<BasicBlock> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = strip_comment(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if name.is_none() {
            let rest = trimmed.strip_prefix("fn ").ok_or_else(|| AsmError::Syntax {
                line: lineno,
                col: col_of(raw, trimmed),
                msg: "expected `fn NAME:` header".into(),
            })?;
            let fname = rest.trim().strip_suffix(':').ok_or_else(|| AsmError::Syntax {
                line: lineno,
                col: raw.len(),
                msg: "function header must end with `:`".into(),
            })?;
            let fname = fname.trim();
            if !is_ident(fname) {
                return Err(AsmError::Syntax {
                    line: lineno,
                    col: col_of(raw, fname),
                    msg: format!("invalid function name `{fname}`"),
                });
            }
            name = Some(fname.to_string());
            continue;
        }
        if let Some(label) = trimmed.strip_suffix(':') {
            let label = label.trim();
            if is_ident(label) && Opcode::from_mnemonic(label).is_none() {
                if let Some(b) = current.take() {
                    blocks.push(b);
                }
                current = Some(BasicBlock::new(label, Vec::new()));
                continue;
            }
        }
        // Instruction line.
        let block = current.as_mut().ok_or_else(|| AsmError::Syntax {
            line: lineno,
            col: col_of(raw, trimmed),
            msg: "instruction before any block label".into(),
        })?;
        let instr = parse_instruction(trimmed, raw, lineno)?;
        block.instructions.push(instr);
    }

    if let Some(b) = current.take() {
        blocks.push(b);
    }
    let name = name.ok_or(AsmError::Syntax {
        line: 1,
        col: 1,
        msg: "missing `fn NAME:` header".into(),
    })?;
    let f = FunctionUnit::new(name, blocks);
    f.validate()?;
    Ok(f)
}

fn parse_instruction(trimmed: &str, raw: &str, lineno: usize) -> Result<Instruction, AsmError> {
    let (mnemonic, rest) = match trimmed.find(char::is_whitespace) {
        Some(idx) => (&trimmed[..idx], trimmed[idx..].trim()),
        None => (trimmed, ""),
    };
    let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| AsmError::UnknownOpcode {
        line: lineno,
        opcode: mnemonic.to_string(),
    })?;
    let operand_texts: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let slots = opcode.operand_slots();
    if operand_texts.len() != slots.len() {
        return Err(AsmError::ArityMismatch {
            line: lineno,
            opcode: mnemonic.to_string(),
            expected: slots.len(),
            got: operand_texts.len(),
        });
    }
    let mut operands = Vec::with_capacity(slots.len());
    for (idx, (text, slot)) in operand_texts.iter().zip(slots).enumerate() {
        let op = parse_operand(text, opcode, *slot, raw, lineno)?;
        if !slot_accepts(*slot, &op) {
            return Err(AsmError::OperandKind {
                line: lineno,
                opcode: mnemonic.to_string(),
                index: idx,
            });
        }
        operands.push(op);
    }
    Ok(Instruction {
        opcode,
        operands,
        text: trimmed.to_string(),
    })
}

fn parse_operand(
    text: &str,
    opcode: Opcode,
    slot: OperandSlot,
    raw: &str,
    lineno: usize,
) -> Result<Operand, AsmError> {
    let syntax = |msg: String| AsmError::Syntax {
        line: lineno,
        col: col_of(raw, text),
        msg,
    };
    if let Some(body) = text.strip_prefix('[') {
        let body = body
            .strip_suffix(']')
            .ok_or_else(|| syntax("unterminated memory operand".into()))?
            .trim();
        let (base_text, sign, off_text) = match body.find(['+', '-']) {
            Some(idx) => (
                body[..idx].trim(),
                if body.as_bytes()[idx] == b'-' { -1i64 } else { 1 },
                body[idx + 1..].trim(),
            ),
            None => (body, 1, "0"),
        };
        let base = parse_register(base_text)
            .ok_or_else(|| syntax(format!("invalid base register `{base_text}`")))?;
        let magnitude: i64 = off_text
            .parse()
            .map_err(|_| syntax(format!("invalid memory offset `{off_text}`")))?;
        let offset = sign * magnitude;
        let offset = i32::try_from(offset)
            .map_err(|_| syntax(format!("memory offset {offset} exceeds 32 bits")))?;
        return Ok(Operand::Mem { base, offset });
    }
    if let Some(name) = text.strip_prefix('@') {
        if !is_ident(name) {
            return Err(syntax(format!("invalid string constant name `{name}`")));
        }
        return Ok(Operand::Str(name.to_string()));
    }
    if let Some(reg) = parse_register(text) {
        return Ok(Operand::Reg(reg));
    }
    if text
        .strip_prefix('-')
        .unwrap_or(text)
        .chars()
        .all(|c| c.is_ascii_digit())
        && !text.is_empty()
        && text != "-"
    {
        let v: i64 = text
            .parse()
            .map_err(|_| syntax(format!("immediate `{text}` does not fit in 64 bits")))?;
        return Ok(Operand::Imm(v));
    }
    if is_ident(text) {
        // Context decides whether a bare identifier is a label or callee.
        return Ok(match (opcode, slot) {
            (Opcode::Call, _) | (_, OperandSlot::Func) => Operand::Func(text.to_string()),
            _ => Operand::Label(text.to_string()),
        });
    }
    Err(syntax(format!("cannot parse operand `{text}`")))
}

fn parse_register(text: &str) -> Option<u8> {
    let digits = text.strip_prefix('r')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let idx: u32 = digits.parse().ok()?;
    (idx <= 15).then_some(idx as u8)
}

fn slot_accepts(slot: OperandSlot, op: &Operand) -> bool {
    match slot {
        OperandSlot::Reg => matches!(op, Operand::Reg(_)),
        OperandSlot::RegOrImm => matches!(op, Operand::Reg(_) | Operand::Imm(_)),
        OperandSlot::RegImmMemStr => matches!(
            op,
            Operand::Reg(_) | Operand::Imm(_) | Operand::Mem { .. } | Operand::Str(_)
        ),
        OperandSlot::Mem => matches!(op, Operand::Mem { .. }),
        OperandSlot::Label => matches!(op, Operand::Label(_)),
        OperandSlot::Func => matches!(op, Operand::Func(_)),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(';') {
        Some(idx) => &line[..idx],
        None => line,
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// 1-based column of `needle` within `haystack`, best effort.
fn col_of(haystack: &str, needle: &str) -> usize {
    let hp = haystack.as_ptr() as usize;
    let np = needle.as_ptr() as usize;
    if np >= hp && np <= hp + haystack.len() {
        np - hp + 1
    } else {
        1
    }
}
