//! Deterministic global optimization of factorable expressions via
//! McCormick relaxations, subgradient-based bound tightening, and spatial
//! branch-and-bound.

pub mod bnb;
pub mod cli;
pub mod expr;
pub mod interval;
pub mod lp;
pub mod mccormick;
pub mod tighten;
