//! Closed-form locally optimal paths for non-interacting qubits.
//!
//! For a planar single qubit (field constrained to a plane), the optimal
//! field rotates rigidly at a rate `Omega` about the constrained axis while
//! the spin precesses about the field at `omega_eff = 2|B|`. Demanding that
//! the spin lands on the antipodal state quantizes the pair of total angles:
//!
//!   (Omega T, Omega' T) = (k pi, l pi),   Omega' = sqrt(Omega^2 + omega_eff^2),
//!
//! with `l > k >= 0` and `l + k` odd. `k = 0` is the geodesic; `k > 0` gives
//! oscillating solutions crossing the equator `L = l - 1` times. These paths
//! also pin down the full phase point (including the costate), which is how
//! [`product_guess`] builds shooting-ready initial conditions for
//! non-interacting multi-qubit problems.
//!
//! The standard frame is: spin starts at `+x`, field starts along `-y`,
//! field-axis rotation vector along `-z`. Other boundaries are handled by
//! conjugating with the rotation that carries the standard frame onto the
//! requested one.

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::dynamics::QbeState;
use crate::linalg::{inner, CVector, C64};
use crate::problem::ControlProblem;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("l + k must be odd (got k = {k}, l = {l})")]
    BadParity { k: u32, l: u32 },
    #[error("need l > k for a valid family (got k = {k}, l = {l})")]
    Degenerate { k: u32, l: u32 },
    #[error("time {t} outside [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },
    #[error("problem has nonzero couplings; analytic product solutions need J = 0")]
    InteractionPresent,
    #[error("boundary of qubit {0} is not an antipodal flip of its initial state")]
    NotAntipodal(usize),
    #[error("initial state is not a product state (qubit {0} reduced purity {1:.6})")]
    EntangledBoundary(usize, f64),
    #[error("per-qubit flight times differ: {0:?}")]
    MismatchedTimes(Vec<f64>),
    #[error("family budget sum {found:.6} does not match the problem budget {expected:.6}")]
    BudgetMismatch { expected: f64, found: f64 },
    #[error("field direction of qubit {0} is not orthogonal to its spin")]
    BadFieldDirection(usize),
    #[error("qubit {0}: oscillating families need exactly one constrained direction")]
    NoConstrainedAxis(usize),
}

/// One member of the analytic rotation family.
#[derive(Debug, Clone, Copy)]
pub struct RotationFamily {
    /// Spin precession rate about the field, `2|B|`.
    pub omega_eff: f64,
    /// Winding integers with `l + k` odd, `l > k >= 0`.
    pub k: u32,
    pub l: u32,
    /// Field-axis rotation rate (zero for the geodesic).
    pub omega: f64,
    /// Rotating-frame precession rate `sqrt(omega^2 + omega_eff^2)`.
    pub omega_prime: f64,
    /// Flight time `l pi / omega_prime`.
    pub time: f64,
}

impl RotationFamily {
    /// Equator crossings of the path, `L = l - 1`.
    pub fn nodes(&self) -> u32 {
        self.l - 1
    }
}

/// Construct the family member for the given winding integers.
pub fn family_solution(omega_eff: f64, k: u32, l: u32) -> Result<RotationFamily, AnalyticError> {
    assert!(omega_eff > 0.0);
    if l <= k {
        return Err(AnalyticError::Degenerate { k, l });
    }
    if (l + k) % 2 == 0 {
        return Err(AnalyticError::BadParity { k, l });
    }
    let ratio = k as f64 / ((l * l - k * k) as f64).sqrt();
    let omega = omega_eff * ratio;
    let omega_prime = (omega * omega + omega_eff * omega_eff).sqrt();
    let time = l as f64 * std::f64::consts::PI / omega_prime;
    Ok(RotationFamily { omega_eff, k, l, omega, omega_prime, time })
}

/// Spin expectation along the family path in the standard frame
/// (`<sigma>(0) = +x`, field starts along `-y`, rotation axis `+z`).
pub fn spin_expectation(family: &RotationFamily, t: f64) -> Result<[f64; 3], AnalyticError> {
    if !(0.0..=family.time + 1e-12).contains(&t) {
        return Err(AnalyticError::OutOfRange { t, t_max: family.time });
    }
    let (o, op, we) = (family.omega, family.omega_prime, family.omega_eff);
    let (c1, s1) = ((o * t).cos(), (o * t).sin());
    let (c2, s2) = ((op * t).cos(), (op * t).sin());
    Ok([
        c1 * c2 + (o / op) * s1 * s2,
        -s1 * c2 + (o / op) * c1 * s2,
        (we / op) * s2,
    ])
}

/// Field direction along the family path in the standard frame: the unit
/// field starts at `-y` and rotates about `-z` at the rate `omega` (the
/// rotation vector is `(0, 0, -omega)`, as the closed-form path demands).
pub fn field_direction(family: &RotationFamily, t: f64) -> [f64; 3] {
    let a = family.omega * t;
    [-a.sin(), -a.cos(), 0.0]
}

/// Composite rotation `R_z^{-1}(phi) R_x^{-1}(Psi) R_y(theta) R_x(Psi)`:
/// a fixed-axis rotation by `theta` about an axis tilted by `Psi` from `y`
/// in the y-z plane, undone by the axis rotation `phi` about `z`.
pub fn rotation_matrix(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, psi.cos(), -psi.sin(),
        0.0, psi.sin(), psi.cos(),
    );
    // R_y here turns x toward -z (the sense that matches the printed
    // closed-form path, which leaves +x toward +z under the inverse tilt).
    let ry = Matrix3::new(
        theta.cos(), 0.0, -theta.sin(),
        0.0, 1.0, 0.0,
        theta.sin(), 0.0, theta.cos(),
    );
    let rz_inv = Matrix3::new(
        phi.cos(), phi.sin(), 0.0,
        -phi.sin(), phi.cos(), 0.0,
        0.0, 0.0, 1.0,
    );
    rz_inv * rx.transpose() * ry * rx
}

/// Plan for one qubit of a product guess.
#[derive(Debug, Clone)]
pub struct QubitPlan {
    pub family: RotationFamily,
    /// Optional initial field direction (unit, orthogonal to the spin).
    /// Defaults to a deterministic in-plane choice; for qubits with one
    /// constrained direction the plane is forced by the constraint.
    pub field_dir: Option<[f64; 3]>,
}

impl QubitPlan {
    pub fn new(family: RotationFamily) -> Self {
        Self { family, field_dir: None }
    }

    pub fn with_field(mut self, dir: [f64; 3]) -> Self {
        self.field_dir = Some(dir);
        self
    }
}

/// Rotation carrying the standard frame `(x, -y, z)` onto
/// `(spin, field, field x spin)`.
fn frame_rotation(spin: &Vector3<f64>, field: &Vector3<f64>) -> Matrix3<f64> {
    let axis = field.cross(spin);
    Matrix3::from_columns(&[*spin, -*field, axis])
}

/// Bloch vector of a qubit from its reduced density matrix entries.
fn bloch_of_reduced(rho: &[[C64; 2]; 2]) -> [f64; 3] {
    [
        2.0 * rho[0][1].re,
        -2.0 * rho[0][1].im,
        (rho[0][0] - rho[1][1]).re,
    ]
}

fn reduced_single_qubit(psi: &CVector, qubit: usize, qubits: usize) -> [[C64; 2]; 2] {
    let dim = psi.len();
    let shift = qubits - 1 - qubit;
    let mut rho = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            if (i & !(1 << shift)) == (j & !(1 << shift)) {
                let bi = (i >> shift) & 1;
                let bj = (j >> shift) & 1;
                rho[bi][bj] += psi[i] * psi[j].conj();
            }
        }
    }
    rho
}

/// Extract the per-qubit pure states of a product state; errors when a
/// reduced state is mixed beyond tolerance.
fn factor_states(psi: &CVector, qubits: usize) -> Result<Vec<CVector>, AnalyticError> {
    let mut factors = Vec::with_capacity(qubits);
    for a in 0..qubits {
        let rho = reduced_single_qubit(psi, a, qubits);
        let purity = (rho[0][0] * rho[0][0] + rho[0][1] * rho[1][0] * 2.0 + rho[1][1] * rho[1][1]).re;
        if (purity - 1.0).abs() > 1e-9 {
            return Err(AnalyticError::EntangledBoundary(a, purity));
        }
        let bloch = bloch_of_reduced(&rho);
        factors.push(crate::problem::qubit_state(bloch));
    }
    Ok(factors)
}

/// Orthogonal complement of a 2-spinor.
fn perp(psi: &CVector) -> CVector {
    CVector::from_vec(vec![-psi[1].conj(), psi[0].conj()])
}

/// Build the full phase point (state, costate, controls, multiplier) whose
/// integration follows the given per-qubit analytic paths exactly. The
/// problem must have no interaction couplings; per-qubit constrained
/// directions (fixed couplings equal to zero on single-site elements) are
/// honored as the rotation axes.
///
/// Returns the state at `t = 0` and the common flight time.
pub fn product_guess(
    problem: &ControlProblem,
    plans: &[QubitPlan],
) -> Result<(QbeState, f64), AnalyticError> {
    let split = problem.split();
    let basis = split.basis();
    let q = problem.qubits();
    let n = split.n_controllable();
    assert_eq!(plans.len(), q, "one plan per qubit");

    // Interaction terms (multi-site fixed elements) must carry zero coupling.
    for (j, e) in basis.elements().iter().enumerate().skip(n) {
        let sites = e.indices().iter().filter(|&&p| p != 0).count();
        if sites > 1 && split.couplings()[j - n].abs() > 1e-12 {
            return Err(AnalyticError::InteractionPresent);
        }
    }

    // Flight times must agree across qubits.
    let times: Vec<f64> = plans.iter().map(|p| p.family.time).collect();
    let t0 = times[0];
    if times.iter().any(|&t| (t - t0).abs() > 1e-9 * t0.max(1.0)) {
        return Err(AnalyticError::MismatchedTimes(times));
    }

    // Budget bookkeeping: sum over qubits of |u^(a)|^2 = 2^(q-2) omega_eff^2.
    let scale = (1u64 << q) as f64;
    let found: f64 = plans.iter().map(|p| scale / 4.0 * p.family.omega_eff * p.family.omega_eff).sum();
    if (found - split.omega_prime_sq()).abs() > 1e-9 * split.omega_prime_sq() {
        return Err(AnalyticError::BudgetMismatch { expected: split.omega_prime_sq(), found });
    }

    let psi0 = problem.psi0();
    let target = problem.psi_target();
    let factors = factor_states(psi0, q)?;
    let target_factors = factor_states(target, q)?;

    // Locate each qubit's single-site basis elements: controllable axes and
    // possibly one constrained axis.
    let mut lambda0 = 1.0f64;
    let mut u0 = DVector::zeros(n);
    let mut phi0 = CVector::zeros(psi0.len());

    for (a, plan) in plans.iter().enumerate() {
        let rho_spin = Vector3::from_column_slice(&bloch_of_reduced(&reduced_single_qubit(psi0, a, q)));
        let spin = rho_spin.normalize();
        let target_spin = Vector3::from_column_slice(&bloch_of_reduced(&reduced_single_qubit(
            target, a, q,
        )))
        .normalize();
        if (target_spin + spin).norm() > 1e-9 {
            return Err(AnalyticError::NotAntipodal(a));
        }

        // Controllable and constrained single-site directions for this qubit.
        let mut controllable_axes: Vec<(usize, usize)> = Vec::new(); // (basis index, pauli axis)
        let mut constrained_axis: Option<Vector3<f64>> = None;
        for (j, e) in basis.elements().iter().enumerate() {
            let nontrivial: Vec<(usize, u8)> = e
                .indices()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0)
                .map(|(s, &p)| (s, p))
                .collect();
            if nontrivial.len() == 1 && nontrivial[0].0 == a {
                let axis = nontrivial[0].1 as usize - 1;
                if j < n {
                    controllable_axes.push((j, axis));
                } else if split.couplings()[j - n].abs() < 1e-12 {
                    let mut v = Vector3::zeros();
                    v[axis] = 1.0;
                    constrained_axis = Some(v);
                }
            }
        }

        // Initial field direction.
        let field: Vector3<f64> = match plan.field_dir {
            Some(d) => {
                let v = Vector3::from_column_slice(&d).normalize();
                if v.dot(&spin).abs() > 1e-9 {
                    return Err(AnalyticError::BadFieldDirection(a));
                }
                v
            }
            None => {
                if let Some(axis) = constrained_axis {
                    // Field in the controllable plane: b = spin x axis.
                    let b = spin.cross(&axis);
                    if b.norm() < 1e-9 {
                        return Err(AnalyticError::BadFieldDirection(a));
                    }
                    b.normalize()
                } else {
                    // Any direction orthogonal to the spin; prefer the z axis.
                    let z = Vector3::new(0.0, 0.0, 1.0);
                    let cand = z - spin * z.dot(&spin);
                    if cand.norm() > 1e-6 {
                        cand.normalize()
                    } else {
                        Vector3::new(1.0, 0.0, 0.0)
                    }
                }
            }
        };
        if plan.family.k > 0 && constrained_axis.is_none() {
            return Err(AnalyticError::NoConstrainedAxis(a));
        }

        let rot = frame_rotation(&spin, &field);
        // Standard-frame data at t = 0; the axis rotation vector points
        // along -z (see `field_direction`).
        let omega_vec_std = Vector3::new(0.0, 0.0, -plan.family.omega);
        let weff_vec_std = Vector3::new(0.0, -plan.family.omega_eff, 0.0);
        let d_std = (omega_vec_std - weff_vec_std) * lambda0 * (scale / 2.0);
        let d_lab = rot * d_std;
        let b_lab = field * (plan.family.omega_eff / 2.0);

        // Controls: u_j = sqrt(2^q) B_j on this qubit's controllable axes.
        for &(j, axis) in &controllable_axes {
            u0[j] = scale.sqrt() * b_lab[axis];
        }
        // Off-plane field components must be representable.
        for axis in 0..3 {
            if b_lab[axis].abs() > 1e-12
                && !controllable_axes.iter().any(|&(_, ax)| ax == axis)
            {
                return Err(AnalyticError::BadFieldDirection(a));
            }
        }

        // Costate factor: solve 2 Re(conj(c) m) = d_lab with
        // m_j = <perp^(a)|sigma_j|psi^(a)>.
        let psi_a = &factors[a];
        let perp_a = perp(psi_a);
        let sigma = single_qubit_sigma_elements(&perp_a, psi_a);
        let re_m = Vector3::new(sigma[0].re, sigma[1].re, sigma[2].re);
        let im_m = Vector3::new(sigma[0].im, sigma[1].im, sigma[2].im);
        let c = C64::new(d_lab.dot(&re_m) / 2.0, d_lab.dot(&im_m) / 2.0);

        // Excited product vector: perp on qubit a, factors elsewhere.
        let mut parts: Vec<CVector> = factors.clone();
        parts[a] = perp_a;
        let excited = crate::problem::product_state(&parts);
        phi0 += excited * c;
        let _ = target_factors;
    }

    // Align the construction with the exact problem psi0 (the tensor of
    // extracted factors can differ from it by a global phase).
    let tensor = crate::problem::product_state(&factors);
    let phase = inner(&tensor, psi0);
    phi0 *= phase / C64::new(phase.norm().max(1e-300), 0.0);

    // Enforce the budget exactly.
    let usq: f64 = u0.iter().map(|v| v * v).sum();
    if usq > 0.0 {
        u0 *= split.omega_prime() / usq.sqrt();
    }
    lambda0 = 1.0;

    Ok((QbeState::new(psi0.clone(), phi0, u0, lambda0), t0))
}

/// Matrix elements `<a|sigma_j|b>` of the three Pauli matrices between
/// 2-spinors.
fn single_qubit_sigma_elements(a: &CVector, b: &CVector) -> [C64; 3] {
    let sx = a[0].conj() * b[1] + a[1].conj() * b[0];
    let sy = (a[0].conj() * b[1] - a[1].conj() * b[0]) * C64::new(0.0, -1.0);
    let sz = a[0].conj() * b[0] - a[1].conj() * b[1];
    [sx, sy, sz]
}
