//! Control problem description: operator split, energy budget, boundary states.

use thiserror::Error;

use crate::linalg::{CVector, C64};
use crate::pauli::{AlgebraError, HamiltonianSplit, OperatorBasis};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("state dimension {found} does not match 2^qubits = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("boundary state norm {0:.6} too far from 1 to renormalize")]
    BadNorm(f64),
}

/// Denominator used in the multiplier rate equation. The controllable-block
/// budget is the self-consistent choice; the full-Hamiltonian variant is kept
/// selectable for reproduction experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaDenominator {
    #[default]
    OmegaPrimeSq,
    TwoOmegaSq,
}

/// A complete time-optimal control problem: Hamiltonian split with budget,
/// plus initial and target states.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    split: HamiltonianSplit,
    psi0: CVector,
    psi_target: CVector,
    lambda_denominator: LambdaDenominator,
}

/// Maximum norm deviation accepted (and silently repaired) for boundary states.
pub const STATE_NORM_TOL: f64 = 1e-6;

impl ControlProblem {
    pub fn new(
        split: HamiltonianSplit,
        psi0: CVector,
        psi_target: CVector,
    ) -> Result<Self, ProblemError> {
        let dim = split.dim();
        for v in [&psi0, &psi_target] {
            if v.len() != dim {
                return Err(ProblemError::DimensionMismatch { expected: dim, found: v.len() });
            }
            let n = v.norm();
            if (n - 1.0).abs() > STATE_NORM_TOL {
                return Err(ProblemError::BadNorm(n));
            }
        }
        let psi0 = psi0.normalize();
        let psi_target = psi_target.normalize();
        Ok(Self { split, psi0, psi_target, lambda_denominator: LambdaDenominator::default() })
    }

    pub fn with_lambda_denominator(mut self, d: LambdaDenominator) -> Self {
        self.lambda_denominator = d;
        self
    }

    /// Same structure with the fixed couplings replaced (used by relaxation).
    pub fn with_couplings(&self, couplings: Vec<f64>) -> Result<Self, ProblemError> {
        let split = HamiltonianSplit::new(
            self.split.basis().clone(),
            self.split.n_controllable(),
            couplings,
            self.split.omega_prime_sq(),
        )?;
        Ok(Self {
            split,
            psi0: self.psi0.clone(),
            psi_target: self.psi_target.clone(),
            lambda_denominator: self.lambda_denominator,
        })
    }

    /// Same structure with a different target state.
    pub fn with_target(&self, psi_target: CVector) -> Result<Self, ProblemError> {
        Self::new(self.split.clone(), self.psi0.clone(), psi_target)
            .map(|p| p.with_lambda_denominator(self.lambda_denominator))
    }

    pub fn split(&self) -> &HamiltonianSplit {
        &self.split
    }

    pub fn basis(&self) -> &OperatorBasis {
        self.split.basis()
    }

    pub fn psi0(&self) -> &CVector {
        &self.psi0
    }

    pub fn psi_target(&self) -> &CVector {
        &self.psi_target
    }

    pub fn lambda_denominator(&self) -> LambdaDenominator {
        self.lambda_denominator
    }

    pub fn dim(&self) -> usize {
        self.split.dim()
    }

    pub fn qubits(&self) -> usize {
        self.basis().qubits()
    }

    /// Denominator value for the multiplier rate equation.
    pub fn lambda_rate_denominator(&self) -> f64 {
        match self.lambda_denominator {
            LambdaDenominator::OmegaPrimeSq => self.split.omega_prime_sq(),
            LambdaDenominator::TwoOmegaSq => {
                let qsq: f64 = self.split.couplings().iter().map(|q| q * q).sum();
                self.split.omega_prime_sq() + qsq
            }
        }
    }

    /// Advisory checks that do not prevent solving. Currently: more than one
    /// constrained single-site direction on a qubit usually leaves the
    /// boundary value problem without solutions.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let q = self.qubits();
        let n = self.split.n_controllable();
        let mut per_qubit = vec![0usize; q];
        for (j, e) in self.basis().elements().iter().enumerate().skip(n) {
            let nontrivial: Vec<usize> =
                e.indices().iter().enumerate().filter(|(_, &p)| p != 0).map(|(a, _)| a).collect();
            if nontrivial.len() == 1 {
                per_qubit[nontrivial[0]] += 1;
            }
            let _ = j;
        }
        for (a, &count) in per_qubit.iter().enumerate() {
            if count > 1 {
                out.push(format!(
                    "qubit {a} has {count} constrained single-site directions; \
                     more than one per qubit usually makes boundary problems unsolvable"
                ));
            }
        }
        out
    }
}

/// Spinor pointing along the Bloch direction `dir` (need not be normalized).
pub fn qubit_state(dir: [f64; 3]) -> CVector {
    let r = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    assert!(r > 0.0, "zero Bloch vector");
    let (x, y, z) = (dir[0] / r, dir[1] / r, dir[2] / r);
    let theta = z.clamp(-1.0, 1.0).acos();
    let phi = y.atan2(x);
    CVector::from_vec(vec![
        C64::new((theta / 2.0).cos(), 0.0),
        C64::new(phi.cos(), phi.sin()) * (theta / 2.0).sin(),
    ])
}

/// Tensor product of single-qubit states, leftmost factor most significant.
pub fn product_state(factors: &[CVector]) -> CVector {
    assert!(!factors.is_empty());
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        let mut next = CVector::zeros(out.len() * f.len());
        for (i, a) in out.iter().enumerate() {
            for (j, b) in f.iter().enumerate() {
                next[i * f.len() + j] = a * b;
            }
        }
        out = next;
    }
    out
}

pub fn plus_x() -> CVector {
    qubit_state([1.0, 0.0, 0.0])
}

pub fn minus_x() -> CVector {
    qubit_state([-1.0, 0.0, 0.0])
}

pub fn plus_y() -> CVector {
    qubit_state([0.0, 1.0, 0.0])
}

pub fn minus_y() -> CVector {
    qubit_state([0.0, -1.0, 0.0])
}

/// Ready-made problem constructors for the systems exercised throughout the
/// crate: planar single qubits, coupled pairs, and a three-qubit chain.
pub mod library {
    use super::*;

    /// Single qubit with controllable x/y fields and the z direction
    /// constrained to zero, flipping `|+x> -> |-x>`.
    ///
    /// `omega_eff` is the spin precession rate `2|B|`; the controllable
    /// budget is `omega'^2 = omega_eff^2 / 2`.
    pub fn single_qubit_planar(omega_eff: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let split =
            HamiltonianSplit::new(basis, 2, vec![0.0], omega_eff * omega_eff / 2.0).unwrap();
        ControlProblem::new(split, plus_x(), minus_x()).unwrap()
    }

    /// Fully controllable single qubit (x, y and z fields), flipping
    /// `|+x> -> |-x>`.
    pub fn single_qubit_isotropic(omega_eff: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let split =
            HamiltonianSplit::new(basis, 3, vec![], omega_eff * omega_eff / 2.0).unwrap();
        ControlProblem::new(split, plus_x(), minus_x()).unwrap()
    }

    /// Two planar qubits with a fixed `J_yy sigma_y sigma_y` interaction,
    /// boundary `|+x>|+y> -> |-x>|-y>`. The per-qubit budget is
    /// `omega_eff` each, so `omega'^2 = 2 omega_eff^2`.
    pub fn yy_coupled_pair(j_yy: f64, omega_eff: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(
            2,
            &[
                vec![1, 0],
                vec![2, 0],
                vec![0, 1],
                vec![0, 2],
                vec![3, 0],
                vec![0, 3],
                vec![2, 2],
            ],
        )
        .unwrap();
        let split =
            HamiltonianSplit::new(basis, 4, vec![0.0, 0.0, 2.0 * j_yy], 2.0 * omega_eff * omega_eff)
                .unwrap();
        let psi0 = product_state(&[plus_x(), plus_y()]);
        let psi_t = product_state(&[minus_x(), minus_y()]);
        ControlProblem::new(split, psi0, psi_t).unwrap()
    }

    /// Two fully controllable qubits with an isotropic Heisenberg exchange
    /// `J sum_m sigma_m sigma_m`, boundary `|+x>|+y> -> |-x>|-y>`.
    /// `omega_prime` is the controllable-block budget.
    pub fn heisenberg_pair(j: f64, omega_prime: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(
            2,
            &[
                vec![1, 0],
                vec![2, 0],
                vec![3, 0],
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 1],
                vec![2, 2],
                vec![3, 3],
            ],
        )
        .unwrap();
        let split = HamiltonianSplit::new(
            basis,
            6,
            vec![2.0 * j, 2.0 * j, 2.0 * j],
            omega_prime * omega_prime,
        )
        .unwrap();
        let psi0 = product_state(&[plus_x(), plus_y()]);
        let psi_t = product_state(&[minus_x(), minus_y()]);
        ControlProblem::new(split, psi0, psi_t).unwrap()
    }

    /// Two planar qubits (z constrained per qubit) with the isotropic
    /// Heisenberg exchange `J sum_m sigma_m sigma_m`, boundary
    /// `|+x>|+y> -> |-x>|-y>`. `omega_prime` is the controllable budget.
    pub fn heisenberg_pair_planar(j: f64, omega_prime: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(
            2,
            &[
                vec![1, 0],
                vec![2, 0],
                vec![0, 1],
                vec![0, 2],
                vec![3, 0],
                vec![0, 3],
                vec![1, 1],
                vec![2, 2],
                vec![3, 3],
            ],
        )
        .unwrap();
        let split = HamiltonianSplit::new(
            basis,
            4,
            vec![0.0, 0.0, 2.0 * j, 2.0 * j, 2.0 * j],
            omega_prime * omega_prime,
        )
        .unwrap();
        let psi0 = product_state(&[plus_x(), plus_y()]);
        let psi_t = product_state(&[minus_x(), minus_y()]);
        ControlProblem::new(split, psi0, psi_t).unwrap()
    }

    /// Three planar qubits chained by `J (sigma_y sigma_y I + I sigma_y sigma_y)`,
    /// boundary `|+x>|+y>|+x> -> |-x>|-y>|-x>`. Per-qubit budget `omega_eff`,
    /// so `omega'^2 = 2 * 3 * omega_eff^2 / ... = 2^(q-2) * sum omega_eff^2`.
    pub fn yy_chain_three(j: f64, omega_eff: f64) -> ControlProblem {
        let basis = OperatorBasis::from_index_sets(
            3,
            &[
                vec![1, 0, 0],
                vec![2, 0, 0],
                vec![0, 1, 0],
                vec![0, 2, 0],
                vec![0, 0, 1],
                vec![0, 0, 2],
                vec![3, 0, 0],
                vec![0, 3, 0],
                vec![0, 0, 3],
                vec![2, 2, 0],
                vec![0, 2, 2],
            ],
        )
        .unwrap();
        let coupling = 8.0f64.sqrt() * j;
        let omega_prime_sq = 2.0 * 3.0 * omega_eff * omega_eff;
        let split = HamiltonianSplit::new(
            basis,
            6,
            vec![0.0, 0.0, 0.0, coupling, coupling],
            omega_prime_sq,
        )
        .unwrap();
        let psi0 = product_state(&[plus_x(), plus_y(), plus_x()]);
        let psi_t = product_state(&[minus_x(), minus_y(), minus_x()]);
        ControlProblem::new(split, psi0, psi_t).unwrap()
    }
}
