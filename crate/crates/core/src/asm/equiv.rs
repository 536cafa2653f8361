//! Randomized semantic-equivalence oracle.
//!
//! Two functions are considered equivalent when, over seeded random initial
//! states, their final registers, final memory and call traces all agree.
//! Execution errors (step cap, undefined flags) make a trial inconclusive
//! rather than a difference.

use super::interp::{execute, MachineState, DEFAULT_STEP_CAP};
use super::FunctionUnit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Number of seeded memory cells in each sampled initial state.
const SEEDED_MEMORY_CELLS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub trial: usize,
    pub initial_regs: [i64; 16],
    pub mismatch: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Equivalence {
    Equivalent,
    Different(Counterexample),
    /// A trial could not be executed to completion on one of the inputs.
    Inconclusive(String),
}

impl Equivalence {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Equivalence::Equivalent)
    }
}

/// Sample the initial state for one trial. Registers are uniform over the
/// full signed 64-bit range; memory gets a handful of seeded cells.
pub fn sample_state(rng: &mut ChaCha20Rng) -> MachineState {
    let mut regs = [0i64; 16];
    for r in regs.iter_mut() {
        *r = rng.gen();
    }
    let mut state = MachineState::with_regs(regs);
    for _ in 0..SEEDED_MEMORY_CELLS {
        let addr: i64 = rng.gen();
        let value: i64 = rng.gen();
        state.memory.insert(addr, value);
    }
    state
}

pub fn semantic_equiv(a: &FunctionUnit, b: &FunctionUnit, trials: usize, seed: u64) -> Equivalence {
    debug_assert!(trials >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let initial = sample_state(&mut rng);
        let initial_regs = initial.regs;
        let fa = match execute(a, initial.clone(), DEFAULT_STEP_CAP) {
            Ok(s) => s,
            Err(e) => return Equivalence::Inconclusive(format!("{}: {e}", a.name)),
        };
        let fb = match execute(b, initial, DEFAULT_STEP_CAP) {
            Ok(s) => s,
            Err(e) => return Equivalence::Inconclusive(format!("{}: {e}", b.name)),
        };
        let mismatch = if fa.regs != fb.regs {
            let r = (0..16).find(|&i| fa.regs[i] != fb.regs[i]).unwrap();
            Some(format!("r{r}: {} vs {}", fa.regs[r], fb.regs[r]))
        } else if fa.memory != fb.memory {
            Some("final memory differs".to_string())
        } else if fa.trace != fb.trace {
            Some("call trace differs".to_string())
        } else {
            None
        };
        if let Some(mismatch) = mismatch {
            return Equivalence::Different(Counterexample {
                trial,
                initial_regs,
                mismatch,
            });
        }
    }
    Equivalence::Equivalent
}
