//! Phase point and integrator for the accelerated optimal-control system.
//!
//! The integrated variables are the state `psi`, the shifted costate
//! `phi'` (which evolves by the bare Schrodinger equation), the control
//! coefficients `u` and the scalar multiplier `lambda`:
//!
//!   psi'   = -i H psi
//!   phi''  = -i H phi'
//!   u'     = (I - P_u) g / lambda,          P_u = u u^T / |u|^2
//!   lambda'= -(v . g) / omega'^2
//!
//! where `g = C lambda' = -C D'` is evaluated directly from matrix elements,
//!
//!   g_j = 2 Im( <H phi'|A_j|psi> - <phi'|A_j|H psi> ),
//!
//! without ever materializing the adjoint-action matrix `C`. This is what
//! keeps the cost per step linear in the number of Hamiltonian terms no
//! matter how the commutator algebra grows.
//!
//! Multiplier bookkeeping: `D'_j = 2 Re<phi'|A_j|psi>` satisfies
//! `D'_j = -lambda u_j` on the controllable block (a constraint preserved by
//! the flow) and defines `lambda'_j = -D'_j - lambda Q_j` on the fixed block.

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{inner, CVector, IM};
use crate::pauli::OperatorBasis;
use crate::problem::ControlProblem;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("lambda = {lambda:.3e} vanished at t = {t:.6}; the path is singular")]
    LambdaZero { t: f64, lambda: f64 },
    #[error("invariant '{what}' blew up to {value:.3e} at step {step} (t = {t:.6})")]
    InvariantBlowup { step: usize, t: f64, what: &'static str, value: f64 },
    #[error("energy variance {0:.3e} below floor; the original-costate map is singular here")]
    DegenerateVariance(f64),
}

/// Hard ceiling on any step residual before the integrator aborts.
pub const BLOWUP_CEILING: f64 = 1e-4;
/// Floor on the energy variance below which `1/DeltaE^2` is refused.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Floor on |lambda| before the path is declared singular.
pub const LAMBDA_FLOOR: f64 = 1e-10;
/// Default integrator resolution (steps per unit time).
pub const DEFAULT_STEPS_PER_UNIT: f64 = 2000.0;

/// The integrated phase point.
#[derive(Debug, Clone)]
pub struct QbeState {
    pub psi: CVector,
    pub phi_prime: CVector,
    pub u: DVector<f64>,
    pub lambda: f64,
    pub t: f64,
}

impl QbeState {
    pub fn new(psi: CVector, phi_prime: CVector, u: DVector<f64>, lambda: f64) -> Self {
        Self { psi, phi_prime, u, lambda, t: 0.0 }
    }

    /// `D'_j = 2 Re<phi'|A_j|psi>` over the full basis.
    pub fn d_prime(&self, basis: &OperatorBasis) -> Vec<f64> {
        (0..basis.len())
            .map(|j| 2.0 * basis.action(j).matrix_element(&self.phi_prime, &self.psi).re)
            .collect()
    }

    /// Multiplier recomputed from the controllable-block relation
    /// `lambda = -(D' . u) / omega'^2`.
    pub fn lambda_algebraic(&self, problem: &ControlProblem) -> f64 {
        let n = problem.split().n_controllable();
        let dp = self.d_prime(problem.basis());
        let num: f64 = (0..n).map(|j| dp[j] * self.u[j]).sum();
        -num / problem.split().omega_prime_sq()
    }
}

/// Derived quantities evaluated at one phase point.
#[derive(Debug, Clone)]
pub struct DerivedQuantities {
    /// Full coefficient vector `xi = u + v`.
    pub xi: Vec<f64>,
    /// `D'_j` over the full basis.
    pub d_prime: Vec<f64>,
    /// `lambda'_j = -D'_j - lambda Q_j` on the fixed block (length m - n).
    pub lambda_prime: Vec<f64>,
    /// `C lambda' = -C D'`, evaluated directly from matrix elements.
    pub c_lambda_prime: Vec<f64>,
    /// Energy variance `xi^T F xi / 2`.
    pub delta_e2: f64,
    /// Covariance matrix `F_jk = <A_j A_k + A_k A_j> - 2 <A_j><A_k>`.
    pub f_matrix: nalgebra::DMatrix<f64>,
    /// Original multipliers `D_j` (diagnostics only; requires healthy
    /// variance, `None` below the floor).
    pub d_original: Option<Vec<f64>>,
}

/// Covariance matrix of the basis observables in the state `psi`;
/// symmetric and positive semidefinite.
pub fn covariance_matrix(psi: &CVector, basis: &OperatorBasis) -> nalgebra::DMatrix<f64> {
    let m = basis.len();
    let dim = basis.dim();
    let mut applied: Vec<CVector> = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    let mut buf = CVector::zeros(dim);
    for j in 0..m {
        basis.action(j).apply(psi, &mut buf);
        means.push(inner(psi, &buf).re);
        applied.push(buf.clone());
    }
    let mut f = nalgebra::DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let v = 2.0 * inner(&applied[j], &applied[k]).re - 2.0 * means[j] * means[k];
            f[(j, k)] = v;
            f[(k, j)] = v;
        }
    }
    f
}

/// Direct evaluation of `g = C lambda' = -C D'` over the full basis:
/// `g_j = 2 Im(<H phi'|A_j|psi> - <phi'|A_j|H psi>)`.
pub fn c_lambda_prime(
    basis: &OperatorBasis,
    psi: &CVector,
    phi_prime: &CVector,
    h_psi: &CVector,
    h_phi: &CVector,
) -> Vec<f64> {
    (0..basis.len())
        .map(|j| {
            let act = basis.action(j);
            let a = act.matrix_element(h_phi, psi);
            let b = act.matrix_element(phi_prime, h_psi);
            2.0 * (a - b).im
        })
        .collect()
}

/// All derived quantities at one phase point.
pub fn derived(state: &QbeState, problem: &ControlProblem) -> DerivedQuantities {
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let u_slice: Vec<f64> = state.u.iter().copied().collect();
    let xi = split.xi(&u_slice);

    let d_prime = state.d_prime(basis);
    let lambda_prime: Vec<f64> = (n..basis.len())
        .map(|j| -d_prime[j] - state.lambda * split.couplings()[j - n])
        .collect();

    let h = split.hamiltonian_unchecked(&u_slice);
    let h_psi = &h * &state.psi;
    let h_phi = &h * &state.phi_prime;
    let clp = c_lambda_prime(basis, &state.psi, &state.phi_prime, &h_psi, &h_phi);

    let f_matrix = covariance_matrix(&state.psi, basis);
    let mut delta_e2 = 0.0;
    for j in 0..basis.len() {
        for k in 0..basis.len() {
            delta_e2 += xi[j] * f_matrix[(j, k)] * xi[k];
        }
    }
    delta_e2 /= 2.0;

    let d_original = if delta_e2 >= VARIANCE_FLOOR {
        Some(
            (0..basis.len())
                .map(|j| {
                    let fk: f64 = (0..basis.len()).map(|k| f_matrix[(j, k)] * xi[k]).sum();
                    d_prime[j] + fk / (2.0 * delta_e2)
                })
                .collect(),
        )
    } else {
        None
    };

    DerivedQuantities { xi, d_prime, lambda_prime, c_lambda_prime: clp, delta_e2, f_matrix, d_original }
}

/// Report from the original-costate reconstruction
/// `phi = phi' + (H - <H>) psi / (2 DeltaE^2)`.
#[derive(Debug, Clone)]
pub struct CostateDiagnostic {
    /// `D_j = 2 Re<phi|A_j|psi>`.
    pub d: Vec<f64>,
    /// Residual of the multiplier relation
    /// `D_j - [sum_k F_jk xi_k / (2 DeltaE^2) - lambda xi_j - lambda'_j]`.
    pub residual: Vec<f64>,
    /// Conserved pairing `D . xi`.
    pub d_dot_xi: f64,
    /// Identity-direction component `2 Re<phi|psi>` (must vanish).
    pub d0: f64,
}

pub fn original_costate_diagnostic(
    state: &QbeState,
    problem: &ControlProblem,
) -> Result<CostateDiagnostic, DynamicsError> {
    let der = derived(state, problem);
    if der.delta_e2 < VARIANCE_FLOOR {
        return Err(DynamicsError::DegenerateVariance(der.delta_e2));
    }
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let u_slice: Vec<f64> = state.u.iter().copied().collect();
    let h = split.hamiltonian_unchecked(&u_slice);
    let h_mean = inner(&state.psi, &(&h * &state.psi)).re;
    let mut phi = &h * &state.psi;
    for i in 0..phi.len() {
        phi[i] = state.phi_prime[i] + (phi[i] - h_mean * state.psi[i]) / (2.0 * der.delta_e2);
    }
    let d: Vec<f64> =
        (0..basis.len()).map(|j| 2.0 * basis.action(j).matrix_element(&phi, &state.psi).re).collect();
    let residual: Vec<f64> = (0..basis.len())
        .map(|j| {
            let fk: f64 = (0..basis.len()).map(|k| der.f_matrix[(j, k)] * der.xi[k]).sum();
            let lp = if j < n { 0.0 } else { der.lambda_prime[j - n] };
            d[j] - (fk / (2.0 * der.delta_e2) - state.lambda * der.xi[j] - lp)
        })
        .collect();
    let d_dot_xi = d.iter().zip(&der.xi).map(|(a, b)| a * b).sum();
    let d0 = 2.0 * inner(&phi, &state.psi).re;
    Ok(CostateDiagnostic { d, residual, d_dot_xi, d0 })
}

/// Tangent vector of the phase point.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub dpsi: CVector,
    pub dphi: CVector,
    pub du: DVector<f64>,
    pub dlambda: f64,
}

/// Right-hand side of the accelerated system at one phase point.
pub fn rhs(state: &QbeState, problem: &ControlProblem) -> Result<Tangent, DynamicsError> {
    if state.lambda.abs() < LAMBDA_FLOOR {
        return Err(DynamicsError::LambdaZero { t: state.t, lambda: state.lambda });
    }
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let u_slice: Vec<f64> = state.u.iter().copied().collect();
    let h = split.hamiltonian_unchecked(&u_slice);
    let h_psi = &h * &state.psi;
    let h_phi = &h * &state.phi_prime;
    let g = c_lambda_prime(basis, &state.psi, &state.phi_prime, &h_psi, &h_phi);

    let usq: f64 = state.u.iter().map(|v| v * v).sum();
    let ug: f64 = (0..n).map(|j| state.u[j] * g[j]).sum();
    let mut du = DVector::zeros(n);
    for j in 0..n {
        du[j] = (g[j] - state.u[j] * ug / usq) / state.lambda;
    }
    let vg: f64 = (n..basis.len()).map(|j| split.couplings()[j - n] * g[j]).sum();
    let dlambda = -vg / problem.lambda_rate_denominator();

    Ok(Tangent { dpsi: h_psi * (-IM), dphi: h_phi * (-IM), du, dlambda })
}

/// How the controls are advanced between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationMode {
    /// Integrate the `u'` equation (default).
    #[default]
    Standard,
    /// Recompute `u = -D'/lambda` (rescaled to the budget) after every step;
    /// an independent consistency route, never the default.
    AlgebraicControls,
}

/// Per-step invariant residuals, measured on the raw Runge-Kutta output
/// before the step corrections are applied.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct StepResiduals {
    /// `| ||psi|| - 1 |` accumulated drift at this step.
    pub psi_norm: f64,
    /// Relative drift of `||phi'||` from its initial value.
    pub phi_norm_rel: f64,
    /// `|Re<phi'|psi>|` before the gauge correction.
    pub gauge: f64,
    /// `| |u|^2 - omega'^2 | / omega'^2` before rescaling.
    pub budget_rel: f64,
    /// `|lambda - lambda_alg| / max(|lambda|, eps)`.
    pub lambda_rel: f64,
}

impl StepResiduals {
    fn max_entry(&self) -> (&'static str, f64) {
        let entries = [
            ("psi_norm", self.psi_norm),
            ("phi_norm_rel", self.phi_norm_rel),
            ("gauge", self.gauge),
            ("budget_rel", self.budget_rel),
            ("lambda_rel", self.lambda_rel),
        ];
        entries.into_iter().fold(("none", 0.0), |acc, e| if e.1 > acc.1 { e } else { acc })
    }
}

/// A time-sampled integration of the accelerated system.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<QbeState>,
    pub step: f64,
    pub residuals: Vec<StepResiduals>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample nearest to time `t`.
    pub fn at(&self, t: f64) -> &QbeState {
        let idx = if self.step > 0.0 {
            ((t / self.step).round() as usize).min(self.samples.len() - 1)
        } else {
            0
        };
        &self.samples[idx]
    }

    /// Worst residual over the whole run.
    pub fn worst_residuals(&self) -> StepResiduals {
        let mut out = StepResiduals::default();
        for r in &self.residuals {
            out.psi_norm = out.psi_norm.max(r.psi_norm);
            out.phi_norm_rel = out.phi_norm_rel.max(r.phi_norm_rel);
            out.gauge = out.gauge.max(r.gauge);
            out.budget_rel = out.budget_rel.max(r.budget_rel);
            out.lambda_rel = out.lambda_rel.max(r.lambda_rel);
        }
        out
    }
}

struct Stepper<'a> {
    problem: &'a ControlProblem,
    mode: IntegrationMode,
    omega_prime: f64,
    phi_norm0: f64,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a ControlProblem, mode: IntegrationMode, initial: &QbeState) -> Self {
        Self {
            problem,
            mode,
            omega_prime: problem.split().omega_prime(),
            phi_norm0: initial.phi_prime.norm(),
        }
    }

    fn add(&self, s: &QbeState, t: &Tangent, h: f64) -> QbeState {
        QbeState {
            psi: &s.psi + &t.dpsi * crate::linalg::C64::new(h, 0.0),
            phi_prime: &s.phi_prime + &t.dphi * crate::linalg::C64::new(h, 0.0),
            u: &s.u + &t.du * h,
            lambda: s.lambda + t.dlambda * h,
            t: s.t + h,
        }
    }

    fn rk4(&self, s: &QbeState, h: f64) -> Result<QbeState, DynamicsError> {
        let k1 = rhs(s, self.problem)?;
        let k2 = rhs(&self.add(s, &k1, h / 2.0), self.problem)?;
        let k3 = rhs(&self.add(s, &k2, h / 2.0), self.problem)?;
        let k4 = rhs(&self.add(s, &k3, h), self.problem)?;
        let mut out = s.clone();
        out.t = s.t + h;
        let h6 = h / 6.0;
        out.psi += (&k1.dpsi + &k4.dpsi + (&k2.dpsi + &k3.dpsi) * crate::linalg::C64::new(2.0, 0.0))
            * crate::linalg::C64::new(h6, 0.0);
        out.phi_prime += (&k1.dphi + &k4.dphi + (&k2.dphi + &k3.dphi) * crate::linalg::C64::new(2.0, 0.0))
            * crate::linalg::C64::new(h6, 0.0);
        out.u += (&k1.du + &k4.du + (&k2.du + &k3.du) * 2.0) * h6;
        out.lambda += h6 * (k1.dlambda + k4.dlambda + 2.0 * (k2.dlambda + k3.dlambda));
        Ok(out)
    }

    /// Measure raw residuals, then project back onto the constraint set:
    /// renormalize `psi`, remove the `psi`-overlap of `phi'`, rescale `u`.
    fn measure_and_correct(&self, s: &mut QbeState) -> StepResiduals {
        let mut res = StepResiduals::default();
        let psi_norm = s.psi.norm();
        res.psi_norm = (psi_norm - 1.0).abs();
        let phi_norm = s.phi_prime.norm();
        res.phi_norm_rel =
            if self.phi_norm0 > 0.0 { (phi_norm - self.phi_norm0).abs() / self.phi_norm0 } else { 0.0 };
        s.psi /= crate::linalg::C64::new(psi_norm, 0.0);

        let overlap = inner(&s.psi, &s.phi_prime);
        res.gauge = overlap.re.abs();
        for i in 0..s.phi_prime.len() {
            s.phi_prime[i] -= overlap * s.psi[i];
        }

        if self.mode == IntegrationMode::AlgebraicControls {
            let n = self.problem.split().n_controllable();
            let basis = self.problem.basis();
            let mut dir = DVector::zeros(n);
            for j in 0..n {
                dir[j] = -2.0 * basis.action(j).matrix_element(&s.phi_prime, &s.psi).re
                    / s.lambda;
            }
            let norm = dir.norm();
            if norm > 0.0 {
                s.u = dir * (self.omega_prime / norm);
            }
        }
        let usq: f64 = s.u.iter().map(|v| v * v).sum();
        let wsq = self.omega_prime * self.omega_prime;
        res.budget_rel = (usq - wsq).abs() / wsq;
        let scale = self.omega_prime / usq.sqrt();
        s.u *= scale;

        let lam_alg = s.lambda_algebraic(self.problem);
        res.lambda_rel = (s.lambda - lam_alg).abs() / s.lambda.abs().max(1e-30);
        res
    }
}

/// Integrate with classical fixed-step fourth-order Runge-Kutta, recording
/// every sample and its residuals. The initial state is projected onto the
/// constraint set before the first step; the final sample lands exactly at
/// `t = t_final`.
pub fn integrate(
    initial: &QbeState,
    problem: &ControlProblem,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    integrate_with(initial, problem, t_final, steps, IntegrationMode::Standard)
}

pub fn integrate_with(
    initial: &QbeState,
    problem: &ControlProblem,
    t_final: f64,
    steps: usize,
    mode: IntegrationMode,
) -> Result<Trajectory, DynamicsError> {
    assert!(t_final > 0.0 && steps > 0);
    let h = t_final / steps as f64;
    let stepper = Stepper::new(problem, mode, initial);
    let mut state = initial.clone();
    state.t = 0.0;
    stepper.measure_and_correct(&mut state);

    let mut samples = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps + 1);
    samples.push(state.clone());
    residuals.push(StepResiduals::default());

    for step in 1..=steps {
        state = stepper.rk4(&state, h)?;
        let res = stepper.measure_and_correct(&mut state);
        let (what, value) = res.max_entry();
        if value > BLOWUP_CEILING {
            return Err(DynamicsError::InvariantBlowup { step, t: state.t, what, value });
        }
        if state.lambda.abs() < LAMBDA_FLOOR {
            return Err(DynamicsError::LambdaZero { t: state.t, lambda: state.lambda });
        }
        samples.push(state.clone());
        residuals.push(res);
    }
    Ok(Trajectory { samples, step: h, residuals })
}

/// Integrate without recording the path; returns the final corrected state.
pub fn propagate(
    initial: &QbeState,
    problem: &ControlProblem,
    t_final: f64,
    steps: usize,
) -> Result<QbeState, DynamicsError> {
    assert!(t_final > 0.0 && steps > 0);
    let h = t_final / steps as f64;
    let stepper = Stepper::new(problem, IntegrationMode::Standard, initial);
    let mut state = initial.clone();
    state.t = 0.0;
    stepper.measure_and_correct(&mut state);
    for step in 1..=steps {
        state = stepper.rk4(&state, h)?;
        let res = stepper.measure_and_correct(&mut state);
        let (what, value) = res.max_entry();
        if value > BLOWUP_CEILING {
            return Err(DynamicsError::InvariantBlowup { step, t: state.t, what, value });
        }
        if state.lambda.abs() < LAMBDA_FLOOR {
            return Err(DynamicsError::LambdaZero { t: state.t, lambda: state.lambda });
        }
    }
    Ok(state)
}
