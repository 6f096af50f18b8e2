//! Entanglement, distance and invariant diagnostics over trajectories,
//! plus the discrete-symmetry analysis of coupled-pair solutions.

use thiserror::Error;

use crate::dynamics::{
    original_costate_diagnostic, QbeState, StepResiduals, Trajectory, VARIANCE_FLOOR,
};
use crate::linalg::{hermitian_eigen, inner, pearson, CMatrix, CVector, C64};
use crate::pauli::{close_basis, structure_tensor, OperatorBasis, PauliString};
use crate::problem::ControlProblem;
use crate::shooting::{shoot, ShootingConfig, ShootingError, ShootingGuess, ShootingProblem, ShootingResult};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("partition must be a nonempty proper subset of qubit indices")]
    BadPartition,
    #[error("operator dimension {found} does not match the trajectory dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("symmetry operator is not unitary (defect {0:.3e})")]
    NotUnitary(f64),
    #[error("transformed control {0} leaves the controllable span")]
    IncompatibleTransform(String),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
}

/// Von Neumann entropy (base 2) of the reduced state over `partition`.
///
/// Eigenvalues are clamped to `[0, 1]` and values below 1e-15 contribute
/// zero by convention.
pub fn entanglement_entropy(
    psi: &CVector,
    partition: &[usize],
    qubits: usize,
) -> Result<f64, DiagnosticsError> {
    let rho = reduced_density_matrix(psi, partition, qubits)?;
    let eig = hermitian_eigen(&rho);
    let mut entropy = 0.0;
    for &p in eig.values.iter() {
        let p = p.clamp(0.0, 1.0);
        if p > 1e-15 {
            entropy -= p * p.log2();
        }
    }
    Ok(entropy)
}

/// Partial trace of `|psi><psi|` over the complement of `partition`.
pub fn reduced_density_matrix(
    psi: &CVector,
    partition: &[usize],
    qubits: usize,
) -> Result<CMatrix, DiagnosticsError> {
    let mut part: Vec<usize> = partition.to_vec();
    part.sort_unstable();
    part.dedup();
    if part.is_empty() || part.len() >= qubits || part.iter().any(|&a| a >= qubits) {
        return Err(DiagnosticsError::BadPartition);
    }
    if psi.len() != (1 << qubits) {
        return Err(DiagnosticsError::DimensionMismatch { expected: 1 << qubits, found: psi.len() });
    }
    let rest: Vec<usize> = (0..qubits).filter(|a| !part.contains(a)).collect();
    let da = 1usize << part.len();
    let db = 1usize << rest.len();
    // Bit of qubit `a` lives at position qubits-1-a (qubit 0 most significant).
    let compose = |a_idx: usize, b_idx: usize| -> usize {
        let mut full = 0usize;
        for (pos, &qa) in part.iter().enumerate() {
            let bit = (a_idx >> (part.len() - 1 - pos)) & 1;
            full |= bit << (qubits - 1 - qa);
        }
        for (pos, &qb) in rest.iter().enumerate() {
            let bit = (b_idx >> (rest.len() - 1 - pos)) & 1;
            full |= bit << (qubits - 1 - qb);
        }
        full
    };
    let mut rho = CMatrix::zeros(da, da);
    for a1 in 0..da {
        for a2 in 0..da {
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..db {
                acc += psi[compose(a1, b)] * psi[compose(a2, b)].conj();
            }
            rho[(a1, a2)] = acc;
        }
    }
    Ok(rho)
}

/// Projective-space distance `arccos |<a|b>|`; zero iff equal up to phase.
pub fn fubini_study_distance(a: &CVector, b: &CVector) -> f64 {
    inner(a, b).norm().clamp(0.0, 1.0).acos()
}

/// Entanglement series of a trajectory for a fixed partition.
pub fn ep_series(traj: &Trajectory, partition: &[usize], qubits: usize) -> Vec<f64> {
    traj.samples
        .iter()
        .map(|s| entanglement_entropy(&s.psi, partition, qubits).unwrap_or(0.0))
        .collect()
}

/// Fubini-Study distance to the target along a trajectory.
pub fn fs_series(traj: &Trajectory, target: &CVector) -> Vec<f64> {
    traj.samples.iter().map(|s| fubini_study_distance(&s.psi, target)).collect()
}

/// Pearson correlation of a series against time (uniform sampling assumed).
pub fn time_correlation(series: &[f64]) -> f64 {
    let t: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    pearson(&t, series)
}

/// Median rigid-rotation rate `|du/dt| / |u|` of the control vector,
/// from central differences over the trajectory.
pub fn control_rotation_rate(traj: &Trajectory) -> f64 {
    let n = traj.samples.len();
    if n < 3 {
        return 0.0;
    }
    let mut rates: Vec<f64> = Vec::with_capacity(n - 2);
    for k in 1..n - 1 {
        let du = (&traj.samples[k + 1].u - &traj.samples[k - 1].u) / (2.0 * traj.step);
        let unorm = traj.samples[k].u.norm();
        if unorm > 0.0 {
            rates.push(du.norm() / unorm);
        }
    }
    rates.sort_by(f64::total_cmp);
    rates[rates.len() / 2]
}

/// Result of the unimodality test on an entanglement series.
#[derive(Debug, Clone, serde::Serialize)]
pub struct UnimodalityReport {
    pub is_unimodal: bool,
    /// Peak position as a fraction of the duration.
    pub peak_fraction: f64,
    pub peak_value: f64,
}

/// Checks that a series rises to a single maximum and falls back, up to a
/// small noise floor. A constant (near-zero) series counts as degenerate
/// unimodal.
pub fn unimodality_check(series: &[f64]) -> UnimodalityReport {
    assert!(series.len() >= 2);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let argmax = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let frac = argmax as f64 / (series.len() - 1) as f64;
    if max <= 1e-12 {
        return UnimodalityReport { is_unimodal: true, peak_fraction: frac, peak_value: max.max(0.0) };
    }
    // Smooth lightly, then demand monotone rise before / fall after the peak.
    let w = (series.len() / 100).max(1);
    let smooth: Vec<f64> = (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(w);
            let hi = (i + w + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let tol = 1e-6 * max + 1e-12;
    let peak = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut ok = true;
    for i in 0..smooth.len() - 1 {
        if i < peak && smooth[i + 1] < smooth[i] - tol {
            ok = false;
        }
        if i >= peak && smooth[i + 1] > smooth[i] + tol {
            ok = false;
        }
    }
    UnimodalityReport { is_unimodal: ok, peak_fraction: frac, peak_value: max }
}

/// Per-check maxima over a trajectory; `None` means the check did not apply.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InvariantReport {
    /// `| ||psi|| - 1 |` on stored samples.
    pub psi_norm: f64,
    /// Raw per-step norm drift accumulated per unit time.
    pub psi_norm_rate: f64,
    /// `|Re<phi'|psi>|` on stored samples.
    pub gauge: f64,
    /// `||u|^2 - omega'^2| / omega'^2` on stored samples.
    pub budget_rel: f64,
    /// `|lambda - lambda_alg| / |lambda|`.
    pub lambda_rel: f64,
    /// `max |D.xi - (D.xi)(0)|` over checked samples.
    pub d_xi_drift: Option<f64>,
    /// `max ||xi^T C||_inf` over the closed basis.
    pub xi_c_norm: f64,
    /// `max || F_dot_fd - (C F + F C^T) ||_max` over interior check points.
    pub f_dot_defect: f64,
    /// `|D' . <sigma>|` for single-qubit problems.
    pub single_qubit_dprime_spin: Option<f64>,
    /// `max ||u(t) - u(0)||` for fully controllable problems.
    pub control_drift: Option<f64>,
    /// Worst raw step residuals recorded during integration.
    pub raw: StepResiduals,
    /// Checks skipped and why.
    pub skipped: Vec<String>,
    /// Sample stride used for the expensive checks.
    pub stride: usize,
}

impl InvariantReport {
    /// The stated tolerance for each populated check, as `(name, value, tol)`.
    pub fn checks(&self, duration: f64) -> Vec<(&'static str, f64, f64)> {
        let mut out = vec![
            ("psi_norm", self.psi_norm, 1e-9),
            ("psi_norm_rate", self.psi_norm_rate, 1e-9 * duration.max(1.0)),
            ("gauge", self.gauge, 1e-8),
            ("budget_rel", self.budget_rel, 1e-10),
            ("lambda_rel", self.lambda_rel, 1e-6),
            ("xi_c_norm", self.xi_c_norm, 1e-12),
            ("f_dot_defect", self.f_dot_defect, 1e-5),
        ];
        if let Some(v) = self.d_xi_drift {
            out.push(("d_xi_drift", v, 1e-7));
        }
        if let Some(v) = self.single_qubit_dprime_spin {
            out.push(("single_qubit_dprime_spin", v, 1e-9));
        }
        if let Some(v) = self.control_drift {
            out.push(("control_drift", v, 1e-8));
        }
        out
    }

    pub fn all_within_tolerance(&self, duration: f64) -> bool {
        self.checks(duration).iter().all(|&(_, value, tol)| value <= tol)
    }
}

/// Evaluate every applicable conservation law and consistency relation on a
/// stored trajectory. Cheap checks run on every sample; algebra-heavy checks
/// (structure constants, covariance flow) run on a strided subset capped
/// near 200 points.
pub fn invariant_suite(traj: &Trajectory, problem: &ControlProblem) -> InvariantReport {
    assert!(!traj.is_empty(), "trajectory must be nonempty");
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let omega_sq = split.omega_prime_sq();
    let mut skipped = Vec::new();

    let mut psi_norm = 0.0f64;
    let mut gauge = 0.0f64;
    let mut budget_rel = 0.0f64;
    let mut lambda_rel = 0.0f64;
    for s in &traj.samples {
        psi_norm = psi_norm.max((s.psi.norm() - 1.0).abs());
        gauge = gauge.max(inner(&s.phi_prime, &s.psi).re.abs());
        let usq: f64 = s.u.iter().map(|v| v * v).sum();
        budget_rel = budget_rel.max((usq - omega_sq).abs() / omega_sq);
        let alg = s.lambda_algebraic(problem);
        lambda_rel = lambda_rel.max((s.lambda - alg).abs() / s.lambda.abs().max(1e-30));
    }
    let raw = traj.worst_residuals();
    let duration = traj.duration().max(traj.step);
    let psi_norm_rate: f64 =
        traj.residuals.iter().map(|r| r.psi_norm).sum::<f64>() / duration;

    // Expensive checks on a strided grid.
    let stride = (traj.samples.len() / 200).max(1);
    let closed = close_basis(basis, &basis.index_sets()).expect("basis closes");
    let tensor = structure_tensor(&closed).expect("closed basis has structure constants");
    let pad = |xi: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; closed.len()];
        out[..xi.len()].copy_from_slice(xi);
        out
    };

    let mut xi_c_norm = 0.0f64;
    let mut f_dot_defect = 0.0f64;
    let mut d_xi_drift: Option<f64> = None;
    let mut d_xi_first: Option<f64> = None;
    let mut variance_skips = 0usize;

    let f_at = |s: &QbeState| crate::dynamics::covariance_matrix(&s.psi, &closed);

    let idx: Vec<usize> = (0..traj.samples.len()).step_by(stride).collect();
    for &k in &idx {
        let s = &traj.samples[k];
        let u_slice: Vec<f64> = s.u.iter().copied().collect();
        let xi = pad(&split.xi(&u_slice));
        let c = tensor.c_matrix(&xi);
        for col in 0..closed.len() {
            let v: f64 = (0..closed.len()).map(|j| xi[j] * c[(j, col)]).sum();
            xi_c_norm = xi_c_norm.max(v.abs());
        }

        // Covariance flow check at interior points, differenced at the
        // trajectory's own step so the O(h^2) error stays below tolerance.
        if k >= 1 && k + 1 < traj.samples.len() {
            let fm = f_at(&traj.samples[k - 1]);
            let fp = f_at(&traj.samples[k + 1]);
            let f0 = f_at(s);
            let dt = 2.0 * traj.step;
            let rhs = &c * &f0 + &f0 * c.transpose();
            for j in 0..closed.len() {
                for l in 0..closed.len() {
                    let fd = (fp[(j, l)] - fm[(j, l)]) / dt;
                    f_dot_defect = f_dot_defect.max((fd - rhs[(j, l)]).abs());
                }
            }
        }

        match original_costate_diagnostic(s, problem) {
            Ok(diag) => {
                let first = *d_xi_first.get_or_insert(diag.d_dot_xi);
                let drift = (diag.d_dot_xi - first).abs();
                d_xi_drift = Some(d_xi_drift.unwrap_or(0.0).max(drift));
            }
            Err(_) => variance_skips += 1,
        }
    }
    if variance_skips > 0 {
        skipped.push(format!(
            "original-costate check skipped at {variance_skips} samples (variance below {VARIANCE_FLOOR:.0e})"
        ));
    }

    // Single-qubit geometric identity D' . <sigma> = 0.
    let single_qubit_dprime_spin = if problem.qubits() == 1 {
        let full = OperatorBasis::from_index_sets(1, &[vec![1], vec![2], vec![3]]).unwrap();
        let mut worst = 0.0f64;
        for &k in &idx {
            let s = &traj.samples[k];
            let mut acc = 0.0;
            for j in 0..3 {
                let dp = 2.0 * full.action(j).matrix_element(&s.phi_prime, &s.psi).re;
                let spin = full.action(j).matrix_element(&s.psi, &s.psi).re;
                acc += dp * spin;
            }
            worst = worst.max(acc.abs());
        }
        Some(worst)
    } else {
        None
    };

    // Fully controllable problems freeze the control vector.
    let control_drift = if n == basis.len() {
        let u0 = &traj.samples[0].u;
        Some(traj.samples.iter().map(|s| (&s.u - u0).norm()).fold(0.0, f64::max))
    } else {
        None
    };

    InvariantReport {
        psi_norm,
        psi_norm_rate,
        gauge,
        budget_rel,
        lambda_rel,
        d_xi_drift,
        xi_c_norm,
        f_dot_defect,
        single_qubit_dprime_spin,
        control_drift,
        raw,
        skipped,
        stride,
    }
}

/// A unitary symmetry of a control problem.
#[derive(Debug, Clone)]
pub struct SymmetryOperator {
    pub matrix: CMatrix,
    pub label: String,
}

impl SymmetryOperator {
    pub fn new(matrix: CMatrix, label: impl Into<String>) -> Result<Self, DiagnosticsError> {
        let n = matrix.nrows();
        let defect = (matrix.adjoint() * &matrix - CMatrix::identity(n, n)).norm();
        if defect > 1e-12 {
            return Err(DiagnosticsError::NotUnitary(defect));
        }
        Ok(Self { matrix, label: label.into() })
    }

    /// The antidiagonal `(i, i, -i, -i)` involution that exchanges the
    /// flipped boundary states of the coupled-pair problems.
    pub fn two_qubit_flip() -> Self {
        let i = C64::new(0.0, 1.0);
        let z = C64::new(0.0, 0.0);
        let m = CMatrix::from_row_slice(
            4,
            4,
            &[z, z, z, i, z, z, i, z, z, -i, z, z, -i, z, z, z],
        );
        Self::new(m, "two-qubit flip involution").unwrap()
    }
}

/// Static symmetry facts about one converged trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SymmetryReport {
    /// `|| F psi0 + psi_target ||`.
    pub boundary_residual: f64,
    /// `|| F psi_mid - psi_mid ||` at `t = T/2`.
    pub mid_defect_plus: f64,
    /// `|| F psi_mid + psi_mid ||` (the other involution branch).
    pub mid_defect_minus: f64,
    /// `|<psi_mid|F psi_mid>|` (phase-free invariance measure).
    pub mid_overlap: f64,
    /// `max_t |E_p(t) - E_p(T-t)|` of the trajectory itself.
    pub ep_self_mirror_defect: f64,
    /// Peak position of `E_p` as a fraction of `T`.
    pub ep_peak_fraction: f64,
}

pub fn symmetry_analysis(
    traj: &Trajectory,
    problem: &ControlProblem,
    op: &SymmetryOperator,
) -> Result<SymmetryReport, DiagnosticsError> {
    let dim = problem.dim();
    if op.matrix.nrows() != dim {
        return Err(DiagnosticsError::DimensionMismatch { expected: dim, found: op.matrix.nrows() });
    }
    let boundary_residual = (&op.matrix * problem.psi0() + problem.psi_target()).norm();
    let mid = traj.at(traj.duration() / 2.0);
    let f_mid = &op.matrix * &mid.psi;
    let mid_defect_plus = (&f_mid - &mid.psi).norm();
    let mid_defect_minus = (&f_mid + &mid.psi).norm();
    let mid_overlap = inner(&mid.psi, &f_mid).norm();

    let series = ep_series(traj, &[0], problem.qubits());
    let len = series.len();
    let mut ep_self_mirror_defect = 0.0f64;
    for k in 0..len {
        ep_self_mirror_defect = ep_self_mirror_defect.max((series[k] - series[len - 1 - k]).abs());
    }
    let uni = unimodality_check(&series);
    Ok(SymmetryReport {
        boundary_residual,
        mid_defect_plus,
        mid_defect_minus,
        mid_overlap,
        ep_self_mirror_defect,
        ep_peak_fraction: uni.peak_fraction,
    })
}

/// Mirror relation of one control channel under the symmetry transform.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ControlMirror {
    /// Index of the source controllable element.
    pub from: usize,
    /// Index it maps onto in the transformed problem.
    pub to: usize,
    pub sign: f64,
}

/// The symmetry-partner trajectory and its mirror defects.
#[derive(Debug)]
pub struct PartnerOutcome {
    pub result: ShootingResult,
    /// `max_t |E_p_partner(t) - E_p(T - t)|`.
    pub ep_mirror_defect: f64,
    /// `max_t max_j |u'_j(t) - sign_j u_{map(j)}(T - t)|`.
    pub control_mirror_defect: f64,
    pub control_map: Vec<ControlMirror>,
}

/// Construct and re-converge the symmetry partner of a converged trajectory:
/// initial data `F psi(T), F phi'(T)` runs the same boundary problem with
/// mirrored controls. For self-symmetric solutions the partner reproduces
/// the original; for asymmetric ones it is the second member of the pair.
pub fn transformed_partner(
    traj: &Trajectory,
    problem: &ControlProblem,
    op: &SymmetryOperator,
    config: &ShootingConfig,
) -> Result<PartnerOutcome, DiagnosticsError> {
    let dim = problem.dim();
    if op.matrix.nrows() != dim {
        return Err(DiagnosticsError::DimensionMismatch { expected: dim, found: op.matrix.nrows() });
    }
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();

    // Expand F^T A_j F in the basis; controls must land on single
    // controllable elements, couplings on themselves.
    let ft = op.matrix.transpose();
    let mut control_map = Vec::with_capacity(n);
    for j in 0..basis.len() {
        let transformed = &ft * basis.matrix(j) * &op.matrix;
        let mut hits: Vec<(usize, f64)> = Vec::new();
        for k in 0..basis.len() {
            let coeff = basis.action(k).trace_with(&transformed);
            if coeff.norm() > 1e-10 {
                if coeff.im.abs() > 1e-10 {
                    return Err(DiagnosticsError::IncompatibleTransform(
                        basis.element(j).label(),
                    ));
                }
                hits.push((k, coeff.re));
            }
        }
        if hits.len() != 1 || (hits[0].1.abs() - 1.0).abs() > 1e-10 {
            return Err(DiagnosticsError::IncompatibleTransform(basis.element(j).label()));
        }
        let (target, sign) = hits[0];
        if j < n {
            if target >= n {
                return Err(DiagnosticsError::IncompatibleTransform(basis.element(j).label()));
            }
            control_map.push(ControlMirror { from: j, to: target, sign });
        } else {
            // Fixed couplings must be invariant so the transformed problem
            // shares the uncontrollable block (H' = F^T H F includes the
            // overall sign of the time reversal).
            let q = split.couplings()[j - n];
            if q.abs() > 1e-12 && (target != j || (sign - 1.0).abs() > 1e-10) {
                return Err(DiagnosticsError::IncompatibleTransform(basis.element(j).label()));
            }
        }
    }

    // Partner initial data from the original endpoint.
    let last = traj.samples.last().expect("nonempty trajectory");
    let psi_tilde = &op.matrix * &last.psi;
    let phi_tilde = &op.matrix * &last.phi_prime;
    // Re-phase both onto the problem's exact psi0 (common phases cancel in
    // every pairing, so this is free).
    let ov = inner(problem.psi0(), &psi_tilde);
    let phase = if ov.norm() > 1e-12 { ov / C64::new(ov.norm(), 0.0) } else { C64::new(1.0, 0.0) };
    let guess = ShootingGuess { phi_prime_0: phi_tilde * phase.conj(), time: traj.duration() };

    let sp = ShootingProblem::with_config(problem.clone(), config.clone());
    let result = shoot(&sp, &guess)?;

    // Mirror defects, sampled on the shared fraction grid.
    let q = problem.qubits();
    let orig_ep = ep_series(traj, &[0], q);
    let part_ep = ep_series(&result.trajectory, &[0], q);
    let m = part_ep.len().min(orig_ep.len());
    let mut ep_mirror_defect = 0.0f64;
    for k in 0..m {
        let frac = k as f64 / (m - 1) as f64;
        let orig_idx = ((1.0 - frac) * (orig_ep.len() - 1) as f64).round() as usize;
        ep_mirror_defect = ep_mirror_defect.max((part_ep[k] - orig_ep[orig_idx]).abs());
    }

    let mut control_mirror_defect = 0.0f64;
    let pn = result.trajectory.samples.len();
    for k in 0..pn {
        let frac = k as f64 / (pn - 1) as f64;
        let orig_idx = ((1.0 - frac) * (traj.samples.len() - 1) as f64).round() as usize;
        let here = &result.trajectory.samples[k].u;
        let there = &traj.samples[orig_idx].u;
        for cm in &control_map {
            let defect = (here[cm.to] - cm.sign * there[cm.from]).abs();
            control_mirror_defect = control_mirror_defect.max(defect);
        }
    }

    Ok(PartnerOutcome { result, ep_mirror_defect, control_mirror_defect, control_map })
}

/// Helper for building operators in tests and the model problems: the dense
/// matrix of an unnormalized Pauli string.
pub fn pauli_string_matrix(indices: &[u8]) -> CMatrix {
    let s = PauliString::new(indices.to_vec()).expect("valid string");
    s.matrix() * C64::new(1.0 / s.normalization(), 0.0)
}
