//! Desk-scale testbed for explainer-guided targeted adversarial attacks
//! against code-similarity models.
//!
//! The pipeline: parse `.basm` functions into CFGs ([`asm`]), extract model
//! feature spaces ([`features`]), embed with seeded surrogate models
//! ([`models`]), score instruction importance with local-surrogate and
//! mask-optimization explainers ([`explain`]), apply semantics-preserving
//! perturbations ([`perturb`]), drive the iterative targeted attack
//! ([`attack`]) and evaluate pool-based retrieval metrics ([`eval`]).

pub mod asm;
pub mod attack;
pub mod cfg;
pub mod corpus;
pub mod eval;
pub mod explain;
pub mod features;
pub mod hash;
pub mod models;
pub mod perturb;

pub use asm::{parse_function, FunctionUnit};
pub use models::{Model, ModelKind};
