//! Model feature spaces: normalized instruction tokens for sequence models
//! and per-block attribute tuples (ACFG) for graph models.

use crate::asm::{BasicBlock, FunctionUnit, Instruction, Opcode, Operand};
use crate::cfg::{betweenness, Cfg};

/// Immediates with |v| above this stay literal; larger ones become `IMM`.
pub const IMMEDIATE_THRESHOLD: i64 = 4096;

/// One normalized token with its provenance inside the function.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedToken {
    pub text: String,
    /// Global instruction index.
    pub instr: usize,
    /// Position within the instruction (0 = opcode).
    pub pos: usize,
}

/// Normalize a single instruction to its token list: lowercased opcode,
/// register names, `MEM`/`IMM` placeholders, small immediates as decimal
/// text, `@str`/`@fn` markers and `LOC` for jump targets.
pub fn normalize_instruction(instr: &Instruction) -> Vec<String> {
    let mut tokens = vec![instr.opcode.mnemonic().to_string()];
    for op in &instr.operands {
        tokens.push(match op {
            Operand::Reg(r) => format!("r{r}"),
            Operand::Imm(v) if v.unsigned_abs() > IMMEDIATE_THRESHOLD as u64 => "IMM".to_string(),
            Operand::Imm(v) => v.to_string(),
            Operand::Mem { .. } => "MEM".to_string(),
            Operand::Label(_) => "LOC".to_string(),
            Operand::Str(_) => "@str".to_string(),
            Operand::Func(_) => "@fn".to_string(),
        });
    }
    tokens
}

/// Tokenize a whole function with provenance, in block order.
pub fn function_tokens(f: &FunctionUnit) -> Vec<NormalizedToken> {
    let mut out = Vec::new();
    for (global, _, _, instr) in f.instructions() {
        for (pos, text) in normalize_instruction(instr).into_iter().enumerate() {
            out.push(NormalizedToken {
                text,
                instr: global,
                pos,
            });
        }
    }
    out
}

/// Primary instruction class; exactly one per instruction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PrimaryClass {
    Arithmetic,
    Transfer,
    Call,
    Control,
    Other,
}

/// Category set of one instruction: a primary class plus overlapping
/// constant/string markers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct InstrCategorySet {
    pub primary: PrimaryClass,
    pub constant: bool,
    pub string: bool,
}

pub fn classify_instruction(instr: &Instruction) -> InstrCategorySet {
    let primary = if instr.opcode.is_arithmetic() {
        PrimaryClass::Arithmetic
    } else if instr.opcode.is_transfer() {
        PrimaryClass::Transfer
    } else if instr.opcode == Opcode::Call {
        PrimaryClass::Call
    } else if instr.opcode.is_control() {
        PrimaryClass::Control
    } else {
        PrimaryClass::Other
    };
    InstrCategorySet {
        primary,
        constant: instr.operands.iter().any(|o| matches!(o, Operand::Imm(_))),
        string: instr.operands.iter().any(|o| matches!(o, Operand::Str(_))),
    }
}

/// The per-block eight-tuple: five count features named by the model family
/// plus total instructions, out-degree and betweenness.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFeatureTuple {
    pub n_str: usize,
    pub n_con: usize,
    pub n_trans: usize,
    pub n_call: usize,
    pub n_instr: usize,
    pub n_ari: usize,
    pub n_offspring: usize,
    pub betweenness: f64,
}

/// Canonical column order of the eight-tuple.
pub const FEATURE_COLUMNS: [&str; 8] = [
    "n_str",
    "n_con",
    "n_trans",
    "n_call",
    "n_instr",
    "n_ari",
    "n_offspring",
    "betweenness",
];

pub const COL_N_STR: usize = 0;
pub const COL_N_CON: usize = 1;
pub const COL_N_TRANS: usize = 2;
pub const COL_N_CALL: usize = 3;
pub const COL_N_INSTR: usize = 4;
pub const COL_N_ARI: usize = 5;
pub const COL_N_OFFSPRING: usize = 6;
pub const COL_BETWEENNESS: usize = 7;

impl BlockFeatureTuple {
    pub fn as_row(&self) -> [f64; 8] {
        [
            self.n_str as f64,
            self.n_con as f64,
            self.n_trans as f64,
            self.n_call as f64,
            self.n_instr as f64,
            self.n_ari as f64,
            self.n_offspring as f64,
            self.betweenness,
        ]
    }
}

fn block_counts(block: &BasicBlock) -> BlockFeatureTuple {
    let mut t = BlockFeatureTuple {
        n_str: 0,
        n_con: 0,
        n_trans: 0,
        n_call: 0,
        n_instr: block.instructions.len(),
        n_ari: 0,
        n_offspring: 0,
        betweenness: 0.0,
    };
    for instr in &block.instructions {
        let c = classify_instruction(instr);
        match c.primary {
            PrimaryClass::Arithmetic => t.n_ari += 1,
            PrimaryClass::Transfer => t.n_trans += 1,
            PrimaryClass::Call => t.n_call += 1,
            PrimaryClass::Control | PrimaryClass::Other => {}
        }
        if c.constant {
            t.n_con += 1;
        }
        if c.string {
            t.n_str += 1;
        }
    }
    t
}

/// Feature tuple of one block within its CFG.
pub fn block_features(f: &FunctionUnit, cfg: &Cfg, block: usize) -> BlockFeatureTuple {
    let centrality = betweenness(&cfg.succs);
    let mut t = block_counts(&f.blocks[block]);
    t.n_offspring = cfg.out_degree(block);
    t.betweenness = centrality[block];
    t
}

/// Attributed CFG: N×8 feature matrix in block order plus the edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct AcfgMatrix {
    pub tuples: Vec<BlockFeatureTuple>,
    pub edges: Vec<(usize, usize)>,
}

impl AcfgMatrix {
    pub fn block_count(&self) -> usize {
        self.tuples.len()
    }

    pub fn rows(&self) -> Vec<[f64; 8]> {
        self.tuples.iter().map(|t| t.as_row()).collect()
    }

    /// Line-oriented serialization: one row per line, columns space
    /// separated, then one `edge s t` line per edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.tuples {
            let row = t.as_row();
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        for (s, t) in &self.edges {
            out.push_str(&format!("edge {s} {t}\n"));
        }
        out
    }
}

pub fn acfg(f: &FunctionUnit, cfg: &Cfg) -> AcfgMatrix {
    let centrality = betweenness(&cfg.succs);
    let tuples = f
        .blocks
        .iter()
        .enumerate()
        .map(|(bi, b)| {
            let mut t = block_counts(b);
            t.n_offspring = cfg.out_degree(bi);
            t.betweenness = centrality[bi];
            t
        })
        .collect();
    AcfgMatrix {
        tuples,
        edges: cfg.edges.clone(),
    }
}
