pub mod analytic;
pub mod diagnostics;
pub mod dynamics;
pub mod grape;
pub mod linalg;
pub mod pauli;
pub mod problem;
pub mod relax;
pub mod shooting;
