//! Traceless orthonormal operator basis built from Pauli strings.
//!
//! A basis element is a normalized tensor product of single-qubit Pauli
//! matrices,
//!
//!   A = (1/sqrt(2^q)) sigma_{i_1} x ... x sigma_{i_q},  i_a in {I,X,Y,Z},
//!
//! so that `Tr A = 0` (the all-identity string is excluded) and
//! `Tr(A_j A_k) = delta_jk`. Hamiltonians are real combinations
//! `H = sum_j xi_j A_j`, split into a controllable block (free coefficients
//! `u`) and a fixed block (couplings `Q`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::linalg::{CMatrix, CVector, C64, IM, ONE, ZERO};

/// Errors from basis construction and operator algebra.
#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("duplicate basis element {0}")]
    DuplicateElement(String),
    #[error("the all-identity string is not traceless and cannot be a basis element")]
    IdentityNotAllowed,
    #[error("pauli index {0} out of range (expected 0..=3)")]
    BadIndex(u8),
    #[error("index sequence has length {found}, expected qubit count {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("empty index sequence")]
    Empty,
    #[error("|u|^2 = {found:.6e} violates the control budget {budget:.6e}")]
    BudgetViolation { budget: f64, found: f64 },
    #[error("commutator with element {0} leaves the span of the basis; close the basis first")]
    NotInSpan(String),
    #[error("basis is not closed under commutation (pair {0}, {1})")]
    NotClosed(String, String),
    #[error("controllable count {n} exceeds basis size {m}")]
    BadSplit { n: usize, m: usize },
    #[error("{0} couplings provided for {1} fixed elements")]
    CouplingCount(usize, usize),
}

const LABELS: [char; 4] = ['i', 'x', 'y', 'z'];

/// Single-site Pauli product table: `sigma_a sigma_b = phase * sigma_c`.
fn site_product(a: u8, b: u8) -> (u8, C64) {
    match (a, b) {
        (0, j) => (j, ONE),
        (i, 0) => (i, ONE),
        (i, j) if i == j => (0, ONE),
        (1, 2) => (3, IM),
        (2, 1) => (3, -IM),
        (2, 3) => (1, IM),
        (3, 2) => (1, -IM),
        (3, 1) => (2, IM),
        (1, 3) => (2, -IM),
        _ => unreachable!("pauli indices are validated at construction"),
    }
}

/// A normalized Hermitian Pauli string `(1/sqrt(2^q)) prod_a sigma_{i_a}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    indices: Vec<u8>,
}

impl PauliString {
    /// Build from per-qubit Pauli indices (0 = identity, 1/2/3 = x/y/z).
    pub fn new(indices: Vec<u8>) -> Result<Self, AlgebraError> {
        if indices.is_empty() {
            return Err(AlgebraError::Empty);
        }
        if let Some(&bad) = indices.iter().find(|&&v| v > 3) {
            return Err(AlgebraError::BadIndex(bad));
        }
        if indices.iter().all(|&v| v == 0) {
            return Err(AlgebraError::IdentityNotAllowed);
        }
        Ok(Self { indices })
    }

    pub fn qubit_count(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        1 << self.indices.len()
    }

    /// Hilbert-Schmidt normalization factor `1/sqrt(Tr I)`.
    pub fn normalization(&self) -> f64 {
        1.0 / (self.dim() as f64).sqrt()
    }

    /// Short label such as "xy" or "yiz" (identity printed as 'i').
    pub fn label(&self) -> String {
        self.indices.iter().map(|&v| LABELS[v as usize]).collect()
    }

    /// Dense matrix representation, including normalization.
    pub fn matrix(&self) -> CMatrix {
        let action = self.action();
        let dim = self.dim();
        let mut m = CMatrix::zeros(dim, dim);
        for row in 0..dim {
            m[(row, row ^ action.flip_mask)] = action.coeffs[row];
        }
        m
    }

    /// Sparse one-entry-per-row form of the matrix.
    pub fn action(&self) -> PauliAction {
        let q = self.indices.len();
        let dim = 1usize << q;
        let mut flip_mask = 0usize;
        for (a, &p) in self.indices.iter().enumerate() {
            if p == 1 || p == 2 {
                flip_mask |= 1 << (q - 1 - a);
            }
        }
        let norm = self.normalization();
        let mut coeffs = vec![ZERO; dim];
        for (row, c) in coeffs.iter_mut().enumerate() {
            let mut v = C64::new(norm, 0.0);
            for (a, &p) in self.indices.iter().enumerate() {
                let bit = (row >> (q - 1 - a)) & 1;
                v *= match (p, bit) {
                    (0, _) | (1, _) => ONE,
                    (2, 0) => -IM,
                    (2, 1) => IM,
                    (3, 0) => ONE,
                    (3, 1) => -ONE,
                    _ => unreachable!(),
                };
            }
            *c = v;
        }
        PauliAction { flip_mask, coeffs }
    }

    /// Product of two strings on the same qubits: `self * other = phase * result`
    /// where the phase refers to the unnormalized sigma products. The strings
    /// commute iff the phase is real.
    pub fn product(&self, other: &Self) -> (C64, Vec<u8>) {
        assert_eq!(self.indices.len(), other.indices.len());
        let mut phase = ONE;
        let mut out = Vec::with_capacity(self.indices.len());
        for (&a, &b) in self.indices.iter().zip(&other.indices) {
            let (c, p) = site_product(a, b);
            phase *= p;
            out.push(c);
        }
        (phase, out)
    }

    /// Whether the two strings commute as matrices.
    pub fn commutes_with(&self, other: &Self) -> bool {
        let (phase, _) = self.product(other);
        phase.im.abs() < 1e-15
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Precomputed sparse application data for a Pauli string: the matrix has a
/// single entry per row at column `row ^ flip_mask` with value `coeffs[row]`.
#[derive(Debug, Clone)]
pub struct PauliAction {
    pub flip_mask: usize,
    pub coeffs: Vec<C64>,
}

impl PauliAction {
    /// `out = A v`.
    #[inline]
    pub fn apply(&self, v: &CVector, out: &mut CVector) {
        for row in 0..self.coeffs.len() {
            out[row] = self.coeffs[row] * v[row ^ self.flip_mask];
        }
    }

    /// `<a| A |b>` without allocating.
    #[inline]
    pub fn matrix_element(&self, a: &CVector, b: &CVector) -> C64 {
        let mut acc = ZERO;
        for row in 0..self.coeffs.len() {
            acc += a[row].conj() * self.coeffs[row] * b[row ^ self.flip_mask];
        }
        acc
    }

    /// `Tr(A M)` using the sparsity of `A`.
    #[inline]
    pub fn trace_with(&self, m: &CMatrix) -> C64 {
        let mut acc = ZERO;
        for row in 0..self.coeffs.len() {
            acc += self.coeffs[row] * m[(row ^ self.flip_mask, row)];
        }
        acc
    }
}

/// An ordered, Hilbert-Schmidt orthonormal set of Pauli strings.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    qubits: usize,
    elements: Vec<PauliString>,
    actions: Vec<PauliAction>,
}

impl OperatorBasis {
    /// Build a basis from index sequences, preserving order.
    pub fn from_index_sets(qubits: usize, sets: &[Vec<u8>]) -> Result<Self, AlgebraError> {
        let mut elements = Vec::with_capacity(sets.len());
        let mut seen = HashSet::new();
        for set in sets {
            if set.len() != qubits {
                return Err(AlgebraError::BadLength { expected: qubits, found: set.len() });
            }
            let ps = PauliString::new(set.clone())?;
            if !seen.insert(ps.indices.clone()) {
                return Err(AlgebraError::DuplicateElement(ps.label()));
            }
            elements.push(ps);
        }
        let actions = elements.iter().map(PauliString::action).collect();
        Ok(Self { qubits, elements, actions })
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn elements(&self) -> &[PauliString] {
        &self.elements
    }

    pub fn element(&self, j: usize) -> &PauliString {
        &self.elements[j]
    }

    pub fn action(&self, j: usize) -> &PauliAction {
        &self.actions[j]
    }

    pub fn index_sets(&self) -> Vec<Vec<u8>> {
        self.elements.iter().map(|e| e.indices.clone()).collect()
    }

    pub fn position(&self, indices: &[u8]) -> Option<usize> {
        self.elements.iter().position(|e| e.indices == indices)
    }

    /// Dense matrix of element `j`.
    pub fn matrix(&self, j: usize) -> CMatrix {
        self.elements[j].matrix()
    }

    /// Assemble `sum_j xi_j A_j` into `out` (overwritten).
    pub fn accumulate(&self, xi: &[f64], out: &mut CMatrix) {
        assert_eq!(xi.len(), self.len());
        out.fill(ZERO);
        for (j, action) in self.actions.iter().enumerate() {
            if xi[j] == 0.0 {
                continue;
            }
            let w = C64::new(xi[j], 0.0);
            for row in 0..action.coeffs.len() {
                out[(row, row ^ action.flip_mask)] += w * action.coeffs[row];
            }
        }
    }

    /// Expectations `<psi|A_j|psi>` for all elements.
    pub fn expectations(&self, psi: &CVector) -> Vec<f64> {
        self.actions.iter().map(|a| a.matrix_element(psi, psi).re).collect()
    }
}

/// Smallest superset of `basis` closed under commutation with the given
/// Hamiltonian terms. New elements are appended after the originals,
/// lexicographically ordered within each sweep, so the result is
/// deterministic. The Pauli algebra on `q` qubits is finite, so this
/// terminates with at most `4^q - 1` elements.
pub fn close_basis(basis: &OperatorBasis, h_terms: &[Vec<u8>]) -> Result<OperatorBasis, AlgebraError> {
    let qubits = basis.qubits();
    let terms: Vec<PauliString> = h_terms
        .iter()
        .map(|t| {
            if t.len() != qubits {
                return Err(AlgebraError::BadLength { expected: qubits, found: t.len() });
            }
            PauliString::new(t.clone())
        })
        .collect::<Result<_, _>>()?;

    let mut ordered = basis.index_sets();
    let mut seen: HashSet<Vec<u8>> = ordered.iter().cloned().collect();
    let mut frontier = ordered.clone();
    while !frontier.is_empty() {
        let mut fresh: Vec<Vec<u8>> = Vec::new();
        for idx in &frontier {
            let e = PauliString::new(idx.clone()).expect("elements are valid");
            for t in &terms {
                let (phase, prod) = t.product(&e);
                // Non-vanishing commutator iff the strings anticommute.
                if phase.im.abs() > 1e-15 && !seen.contains(&prod) {
                    seen.insert(prod.clone());
                    fresh.push(prod);
                }
            }
        }
        fresh.sort();
        ordered.extend(fresh.iter().cloned());
        frontier = fresh;
    }
    OperatorBasis::from_index_sets(qubits, &ordered)
}

/// Adjoint-action coefficients of `H` on the basis:
/// `[H, A_j] = -i sum_k C_jk A_k` with `C` real and antisymmetric.
///
/// Fails with `NotInSpan` when a commutator has weight outside the basis;
/// the caller is expected to run [`close_basis`] first in that case.
pub fn commutator_coefficients(h: &CMatrix, basis: &OperatorBasis) -> Result<nalgebra::DMatrix<f64>, AlgebraError> {
    let m = basis.len();
    let dim = basis.dim();
    let mut c = nalgebra::DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let aj = basis.matrix(j);
        let comm = h * &aj - &aj * h;
        // i [H, A_j] = sum_k C_jk A_k
        let target = comm * IM;
        let mut recomposed = CMatrix::zeros(dim, dim);
        for k in 0..m {
            let coeff = basis.action(k).trace_with(&target);
            debug_assert!(coeff.im.abs() < 1e-10);
            c[(j, k)] = coeff.re;
            if coeff.re != 0.0 {
                let w = C64::new(coeff.re, 0.0);
                let act = basis.action(k);
                for row in 0..dim {
                    recomposed[(row, row ^ act.flip_mask)] += w * act.coeffs[row];
                }
            }
        }
        let residual = (&target - &recomposed).norm();
        let scale = target.norm().max(1.0);
        if residual > 1e-10 * scale {
            return Err(AlgebraError::NotInSpan(basis.element(j).label()));
        }
    }
    Ok(c)
}

/// Totally antisymmetric structure constants `[A_mu, A_nu] = sum_g P_{mu nu g} A_g`.
///
/// Coefficients are computed from dense matrix commutators and stored for
/// canonically ordered index pairs; antisymmetry supplies the rest.
#[derive(Debug, Clone)]
pub struct StructureTensor {
    size: usize,
    /// Keyed by (mu, nu, gamma) with mu < nu; values purely imaginary.
    entries: BTreeMap<(usize, usize, usize), C64>,
}

impl StructureTensor {
    pub fn basis_size(&self) -> usize {
        self.size
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// `P_{mu nu gamma}` with antisymmetry under exchange of the first two
    /// indices handled here (total antisymmetry holds for the stored values
    /// and is exercised by tests through the commutator definition).
    pub fn get(&self, mu: usize, nu: usize, gamma: usize) -> C64 {
        if mu == nu {
            return ZERO;
        }
        let (a, b, sign) = if mu < nu { (mu, nu, 1.0) } else { (nu, mu, -1.0) };
        self.entries
            .get(&(a, b, gamma))
            .map(|&v| v * C64::new(sign, 0.0))
            .unwrap_or(ZERO)
    }

    /// Iterate stored entries `((mu, nu, gamma), value)` with `mu < nu`.
    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize, usize), &C64)> {
        self.entries.iter()
    }

    /// Contract with a coefficient vector: `C_jk = i sum_n P_{n j k} xi_n`.
    pub fn c_matrix(&self, xi: &[f64]) -> nalgebra::DMatrix<f64> {
        assert_eq!(xi.len(), self.size);
        let mut c = nalgebra::DMatrix::<f64>::zeros(self.size, self.size);
        for (&(mu, nu, gamma), &p) in &self.entries {
            // P is stored for mu < nu; use antisymmetry for the swap.
            let v = (IM * p).re;
            if xi[mu] != 0.0 {
                c[(nu, gamma)] += v * xi[mu];
            }
            if xi[nu] != 0.0 {
                c[(mu, gamma)] -= v * xi[nu];
            }
        }
        c
    }
}

/// Compute the structure tensor of a commutation-closed basis.
pub fn structure_tensor(basis: &OperatorBasis) -> Result<StructureTensor, AlgebraError> {
    let m = basis.len();
    let dim = basis.dim();
    let mut entries = BTreeMap::new();
    for mu in 0..m {
        let amu = basis.matrix(mu);
        for nu in (mu + 1)..m {
            let anu = basis.matrix(nu);
            let comm = &amu * &anu - &anu * &amu;
            let norm = comm.norm();
            if norm < 1e-14 {
                continue;
            }
            let mut recomposed = CMatrix::zeros(dim, dim);
            for gamma in 0..m {
                let p = basis.action(gamma).trace_with(&comm);
                if p.norm() > 1e-13 {
                    debug_assert!(p.re.abs() < 1e-10, "structure constants must be imaginary");
                    entries.insert((mu, nu, gamma), C64::new(0.0, p.im));
                    let act = basis.action(gamma);
                    for row in 0..dim {
                        recomposed[(row, row ^ act.flip_mask)] += p * act.coeffs[row];
                    }
                }
            }
            if (&comm - &recomposed).norm() > 1e-12 * norm.max(1.0) {
                return Err(AlgebraError::NotClosed(
                    basis.element(mu).label(),
                    basis.element(nu).label(),
                ));
            }
        }
    }
    Ok(StructureTensor { size: m, entries })
}

/// Hamiltonian decomposition into a controllable block (the first `n`
/// basis elements, with free coefficients `u`) and a fixed block with
/// prescribed couplings `Q`, under the control budget `|u|^2 = omega'^2`.
#[derive(Debug, Clone)]
pub struct HamiltonianSplit {
    basis: OperatorBasis,
    n_controllable: usize,
    couplings: Vec<f64>,
    omega_prime_sq: f64,
}

/// Relative tolerance on the control budget before assembly refuses.
pub const BUDGET_REL_TOL: f64 = 1e-9;

impl HamiltonianSplit {
    pub fn new(
        basis: OperatorBasis,
        n_controllable: usize,
        couplings: Vec<f64>,
        omega_prime_sq: f64,
    ) -> Result<Self, AlgebraError> {
        if n_controllable > basis.len() {
            return Err(AlgebraError::BadSplit { n: n_controllable, m: basis.len() });
        }
        let fixed = basis.len() - n_controllable;
        if couplings.len() != fixed {
            return Err(AlgebraError::CouplingCount(couplings.len(), fixed));
        }
        assert!(omega_prime_sq > 0.0, "control budget must be positive");
        Ok(Self { basis, n_controllable, couplings, omega_prime_sq })
    }

    pub fn basis(&self) -> &OperatorBasis {
        &self.basis
    }

    pub fn n_controllable(&self) -> usize {
        self.n_controllable
    }

    pub fn n_fixed(&self) -> usize {
        self.basis.len() - self.n_controllable
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn omega_prime_sq(&self) -> f64 {
        self.omega_prime_sq
    }

    pub fn omega_prime(&self) -> f64 {
        self.omega_prime_sq.sqrt()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Full coefficient vector `xi = u + v`.
    pub fn xi(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n_controllable);
        let mut xi = Vec::with_capacity(self.basis.len());
        xi.extend_from_slice(u);
        xi.extend_from_slice(&self.couplings);
        xi
    }

    /// `H = sum_{j<=n} u_j A_j + sum_{j>n} Q_j A_j`, enforcing the budget.
    pub fn hamiltonian(&self, u: &[f64]) -> Result<CMatrix, AlgebraError> {
        let usq: f64 = u.iter().map(|v| v * v).sum();
        if (usq - self.omega_prime_sq).abs() > BUDGET_REL_TOL * self.omega_prime_sq {
            return Err(AlgebraError::BudgetViolation { budget: self.omega_prime_sq, found: usq });
        }
        Ok(self.hamiltonian_unchecked(u))
    }

    /// Assembly without the budget check, for integrators that renormalize
    /// `u` themselves and for diagnostic evaluation at off-budget points.
    pub fn hamiltonian_unchecked(&self, u: &[f64]) -> CMatrix {
        let dim = self.dim();
        let mut h = CMatrix::zeros(dim, dim);
        self.hamiltonian_into(u, &mut h);
        h
    }

    /// In-place assembly into a scratch matrix.
    pub fn hamiltonian_into(&self, u: &[f64], out: &mut CMatrix) {
        let xi = self.xi(u);
        self.basis.accumulate(&xi, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;

    fn sigma(i: usize) -> CMatrix {
        match i {
            0 => CMatrix::identity(2, 2),
            1 => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
            2 => CMatrix::from_row_slice(2, 2, &[ZERO, -IM, IM, ZERO]),
            3 => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
            _ => unreachable!(),
        }
    }

    /// Oracle: dense matrix of a Pauli string built by explicit Kronecker
    /// products, independent of the bit-twiddling in `action()`.
    fn dense_oracle(indices: &[u8]) -> CMatrix {
        let mut m = sigma(indices[0] as usize);
        for &i in &indices[1..] {
            m = kron(&m, &sigma(i as usize));
        }
        let norm = 1.0 / ((1u64 << indices.len()) as f64).sqrt();
        m * C64::new(norm, 0.0)
    }

    #[test]
    fn matrix_matches_kron_oracle() {
        for indices in [
            vec![1u8],
            vec![2],
            vec![3],
            vec![1, 0],
            vec![2, 2],
            vec![0, 3],
            vec![3, 2, 1],
            vec![2, 0, 3],
        ] {
            let ps = PauliString::new(indices.clone()).unwrap();
            let diff = (ps.matrix() - dense_oracle(&indices)).norm();
            assert!(diff < 1e-14, "mismatch for {indices:?}: {diff:e}");
        }
    }

    #[test]
    fn action_apply_matches_matrix() {
        let ps = PauliString::new(vec![2, 3, 1]).unwrap();
        let dim = ps.dim();
        let mut v = CVector::zeros(dim);
        for i in 0..dim {
            v[i] = C64::new((i as f64).sin() + 0.3, (i as f64).cos());
        }
        let mut out = CVector::zeros(dim);
        ps.action().apply(&v, &mut out);
        let direct = ps.matrix() * &v;
        assert!((out - direct).norm() < 1e-14);
    }

    #[test]
    fn single_qubit_basis_is_orthonormal() {
        let basis =
            OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        for j in 0..3 {
            let aj = basis.matrix(j);
            assert!(aj.trace().norm() < 1e-15);
            for k in 0..3 {
                let ak = basis.matrix(k);
                let tr = (aj.clone() * ak).trace();
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((tr.re - expected).abs() < 1e-14 && tr.im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_string_rejected() {
        assert_eq!(
            OperatorBasis::from_index_sets(1, &[vec![0]]).unwrap_err(),
            AlgebraError::IdentityNotAllowed
        );
    }

    #[test]
    fn duplicates_and_bad_indices_rejected() {
        assert!(matches!(
            OperatorBasis::from_index_sets(2, &[vec![1, 0], vec![1, 0]]).unwrap_err(),
            AlgebraError::DuplicateElement(_)
        ));
        assert_eq!(
            OperatorBasis::from_index_sets(1, &[vec![4]]).unwrap_err(),
            AlgebraError::BadIndex(4)
        );
        assert!(matches!(
            OperatorBasis::from_index_sets(2, &[vec![1]]).unwrap_err(),
            AlgebraError::BadLength { .. }
        ));
    }

    #[test]
    fn five_element_interacting_basis_builds() {
        let basis = OperatorBasis::from_index_sets(
            2,
            &[vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2], vec![2, 2]],
        )
        .unwrap();
        assert_eq!(basis.len(), 5);
        for j in 0..5 {
            for k in 0..5 {
                let tr = (basis.matrix(j) * basis.matrix(k)).trace();
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((tr.re - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn assemble_initial_field_of_single_qubit_example() {
        // u = (0, -sqrt(2) w) over (sigma_x, sigma_y)/sqrt(2) gives H = -w sigma_y.
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2]]).unwrap();
        let w = 1.7;
        let split = HamiltonianSplit::new(basis, 2, vec![], 2.0 * w * w).unwrap();
        let h = split.hamiltonian(&[0.0, -(2.0f64).sqrt() * w]).unwrap();
        let expected = sigma(2) * C64::new(-w, 0.0);
        assert!((h - expected).norm() < 1e-12);
    }

    #[test]
    fn assemble_rejects_budget_violation() {
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2]]).unwrap();
        let split = HamiltonianSplit::new(basis, 2, vec![], 2.0).unwrap();
        assert!(matches!(
            split.hamiltonian(&[1.0, 1.1]).unwrap_err(),
            AlgebraError::BudgetViolation { .. }
        ));
    }

    #[test]
    fn assemble_zero_controls_gives_zero_matrix() {
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let split = HamiltonianSplit::new(basis, 3, vec![], 1.0).unwrap();
        let h = split.hamiltonian_unchecked(&[0.0, 0.0, 0.0]);
        assert!(h.norm() < 1e-15);
    }

    #[test]
    fn assemble_heisenberg_coupling_block() {
        // All B = 0, J = 1: H = sum_m sigma_m x sigma_m, i.e. couplings 2J on
        // normalized two-qubit strings.
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
        let split = HamiltonianSplit::new(basis, 6, vec![2.0, 2.0, 2.0], 4.0).unwrap();
        let h = split.hamiltonian_unchecked(&[0.0; 6]);
        let expected = kron(&sigma(1), &sigma(1)) + kron(&sigma(2), &sigma(2)) + kron(&sigma(3), &sigma(3));
        assert!((h - expected).norm() < 1e-12);
    }

    #[test]
    fn commutator_coefficients_single_qubit_row() {
        // H = w sigma_y: i[H, A_1] = 2w A_3.
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let w = 0.9;
        let h = sigma(2) * C64::new(w, 0.0);
        let c = commutator_coefficients(&h, &basis).unwrap();
        assert!((c[(0, 2)] - 2.0 * w).abs() < 1e-12);
        assert!(c[(0, 0)].abs() < 1e-12 && c[(0, 1)].abs() < 1e-12);
        // Diagonal-in-basis H has a zero self-row.
        let hy = sigma(2) * C64::new(1.3, 0.0);
        let cy = commutator_coefficients(&hy, &basis).unwrap();
        for k in 0..3 {
            assert!(cy[(1, k)].abs() < 1e-13);
        }
    }

    #[test]
    fn xi_annihilates_c_and_c_is_antisymmetric() {
        let basis = OperatorBasis::from_index_sets(
            2,
            &[vec![1, 0], vec![2, 0], vec![3, 0], vec![0, 1], vec![0, 2], vec![0, 3], vec![2, 2], vec![3, 2], vec![2, 3], vec![1, 2], vec![2, 1], vec![1, 1], vec![3, 3], vec![1, 3], vec![3, 1]],
        )
        .unwrap();
        let xi: Vec<f64> = (0..15).map(|i| ((i * 7 + 3) % 11) as f64 / 7.0 - 0.6).collect();
        let mut h = CMatrix::zeros(4, 4);
        basis.accumulate(&xi, &mut h);
        let c = commutator_coefficients(&h, &basis).unwrap();
        for k in 0..15 {
            let col: f64 = (0..15).map(|j| xi[j] * c[(j, k)]).sum();
            let row: f64 = (0..15).map(|j| c[(k, j)] * xi[j]).sum();
            assert!(col.abs() < 1e-12, "xi.C nonzero: {col:e}");
            assert!(row.abs() < 1e-12, "C.xi nonzero: {row:e}");
        }
        let asym = (&c + c.transpose()).abs().max();
        assert!(asym < 1e-12);
    }

    #[test]
    fn commutator_coefficients_reports_not_in_span() {
        let basis = OperatorBasis::from_index_sets(2, &[vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2], vec![2, 2]]).unwrap();
        let mut h = CMatrix::zeros(4, 4);
        basis.accumulate(&[0.4, -0.2, 0.1, 0.3, 0.8], &mut h);
        assert!(matches!(
            commutator_coefficients(&h, &basis).unwrap_err(),
            AlgebraError::NotInSpan(_)
        ));
    }

    /// Oracle for closures: extend the span by dense-matrix commutators until
    /// a fixed point, tracking membership by projection onto every string.
    fn closure_oracle(initial: &[Vec<u8>], terms: &[Vec<u8>], q: usize) -> usize {
        let all_strings: Vec<Vec<u8>> = {
            let mut acc = vec![];
            let count = 4usize.pow(q as u32);
            for code in 1..count {
                let mut idx = vec![0u8; q];
                let mut c = code;
                for a in (0..q).rev() {
                    idx[a] = (c % 4) as u8;
                    c /= 4;
                }
                acc.push(idx);
            }
            acc
        };
        let mut member: HashSet<Vec<u8>> = initial.iter().cloned().collect();
        loop {
            let mut grew = false;
            let members: Vec<Vec<u8>> = member.iter().cloned().collect();
            for t in terms {
                let tm = dense_oracle(t);
                for e in &members {
                    let em = dense_oracle(e);
                    let comm = &tm * &em - &em * &tm;
                    if comm.norm() < 1e-12 {
                        continue;
                    }
                    for s in &all_strings {
                        if member.contains(s) {
                            continue;
                        }
                        let sm = dense_oracle(s);
                        let proj = (sm.adjoint() * &comm).trace().norm();
                        if proj > 1e-12 {
                            member.insert(s.clone());
                            grew = true;
                        }
                    }
                }
            }
            if !grew {
                return member.len();
            }
        }
    }

    #[test]
    fn close_basis_single_qubit_stays_within_su2() {
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2]]).unwrap();
        let closed = close_basis(&basis, &[vec![1], vec![2]]).unwrap();
        assert!(closed.len() <= 3);
        assert_eq!(closed.len(), 3); // x, y generate z
    }

    #[test]
    fn close_basis_matches_dense_oracle_for_interacting_terms() {
        let sets = vec![vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2], vec![2, 2]];
        let basis = OperatorBasis::from_index_sets(2, &sets).unwrap();
        let closed = close_basis(&basis, &sets).unwrap();
        assert!(closed.len() > basis.len());
        assert!(closed.len() <= 15);
        let oracle = closure_oracle(&sets, &sets, 2);
        assert_eq!(closed.len(), oracle);
        // Generated z x y and y x z strings in particular.
        assert!(closed.position(&[3, 2]).is_some());
        assert!(closed.position(&[2, 3]).is_some());
        // Idempotent.
        let twice = close_basis(&closed, &sets).unwrap();
        assert_eq!(twice.len(), closed.len());
        assert_eq!(twice.index_sets(), closed.index_sets());
    }

    #[test]
    fn close_basis_with_no_terms_is_identity() {
        let basis = OperatorBasis::from_index_sets(2, &[vec![1, 0], vec![0, 2]]).unwrap();
        let closed = close_basis(&basis, &[]).unwrap();
        assert_eq!(closed.index_sets(), basis.index_sets());
    }

    #[test]
    fn structure_tensor_su2_constant() {
        // [A_1, A_2] = i sqrt(2) A_3 for the normalized single-qubit basis;
        // direct matrix arithmetic fixes the constant.
        let basis = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let tensor = structure_tensor(&basis).unwrap();
        let p = tensor.get(0, 1, 2);
        assert!(p.re.abs() < 1e-14);
        assert!((p.im - 2.0f64.sqrt()).abs() < 1e-13);
        // Even permutations agree, odd ones flip sign.
        assert!((tensor.get(1, 0, 2) + p).norm() < 1e-14);
        // Repeated index vanishes.
        assert!(tensor.get(1, 1, 2).norm() == 0.0);
    }

    #[test]
    fn structure_tensor_cross_qubit_elements_commute() {
        let basis = OperatorBasis::from_index_sets(2, &[vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2], vec![3, 0], vec![0, 3]]).unwrap();
        let tensor = structure_tensor(&basis).unwrap();
        for gamma in 0..basis.len() {
            assert!(tensor.get(0, 1, gamma).norm() == 0.0);
        }
    }

    #[test]
    fn structure_tensor_recomposes_commutators() {
        let sets = vec![vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2], vec![2, 2]];
        let basis = OperatorBasis::from_index_sets(2, &sets).unwrap();
        let closed = close_basis(&basis, &sets).unwrap();
        let full = close_basis(&closed, &closed.index_sets()).unwrap();
        let tensor = structure_tensor(&full).unwrap();
        for mu in 0..full.len() {
            for nu in 0..full.len() {
                let amu = full.matrix(mu);
                let anu = full.matrix(nu);
                let comm = &amu * &anu - &anu * &amu;
                let mut recomposed = CMatrix::zeros(4, 4);
                for gamma in 0..full.len() {
                    let p = tensor.get(mu, nu, gamma);
                    if p.norm() > 0.0 {
                        recomposed += full.matrix(gamma) * p;
                    }
                }
                let err = (&comm - &recomposed)
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max);
                assert!(err < 1e-13, "recomposition error {err:e} at ({mu},{nu})");
            }
        }
    }

    #[test]
    fn structure_tensor_rejects_open_basis() {
        let basis = OperatorBasis::from_index_sets(2, &[vec![1, 0], vec![2, 0], vec![2, 2]]).unwrap();
        assert!(matches!(structure_tensor(&basis).unwrap_err(), AlgebraError::NotClosed(_, _)));
    }

    #[test]
    fn c_matrix_from_tensor_matches_direct_computation() {
        let sets = vec![vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 2], vec![2, 2]];
        let basis = OperatorBasis::from_index_sets(2, &sets).unwrap();
        let closed = close_basis(&basis, &sets).unwrap();
        let full = close_basis(&closed, &closed.index_sets()).unwrap();
        let tensor = structure_tensor(&full).unwrap();
        let mut xi = vec![0.0; full.len()];
        for (j, x) in xi.iter_mut().enumerate() {
            *x = ((j * 5 + 2) % 7) as f64 / 5.0 - 0.4;
        }
        let mut h = CMatrix::zeros(4, 4);
        full.accumulate(&xi, &mut h);
        let direct = commutator_coefficients(&h, &full).unwrap();
        let from_tensor = tensor.c_matrix(&xi);
        assert!((direct - from_tensor).abs().max() < 1e-12);
    }
}
