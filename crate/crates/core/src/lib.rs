//! Computable objects of two-weight dyadic harmonic analysis.

pub mod alpert;
pub mod appendix;
pub mod constants;
pub mod corona;
pub mod estimate;
pub mod forms;
pub mod grid;
pub mod kernel;
pub mod measure;
pub mod poly;
pub mod quad;
pub mod report;
pub mod squarefn;
pub mod verify;
