//! Two-point boundary value solver: multidimensional Newton-Raphson on the
//! unknowns `(phi'_0, T)` with a finite-difference Jacobian.
//!
//! Both gauge freedoms are exploited rather than fought: the `psi`-parallel
//! component of `phi'_0` is projected out on entry (so that direction is
//! exactly neutral), and the overall scale of `phi'_0` only shifts the
//! invisible multipliers (so the radial direction is neutral too). Neutral
//! directions surface as near-zero singular values of the Jacobian and are
//! discarded by an SVD pseudo-inverse with a relative floor. The global
//! phase of the final state is aligned analytically in the discrepancy, not
//! treated as an unknown.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{integrate, propagate, DynamicsError, QbeState, Trajectory};
use crate::linalg::{inner, CVector, C64};
use crate::problem::ControlProblem;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error("no convergence in {0} iterations (best d2 = {1:.3e})")]
    MaxItersExceeded(usize, f64, Box<ShootingResult>),
    #[error("all Jacobian directions are neutral; nothing to update")]
    SingularJacobian,
    #[error("controllable block of D' vanishes; cannot normalize the initial controls")]
    ZeroControl,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// How the discrepancy vector is formed from `psi(T)` and the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyMode {
    /// Real and imaginary parts of `psi(T) - psi_target` after aligning the
    /// global phase to make `<target|psi(T)>` real nonnegative.
    #[default]
    ComponentDifference,
    /// Components of `(1 - |target><target|) psi(T)` plus the projective
    /// infidelity row.
    ProjectiveFidelity,
}

/// Solver knobs. Tolerances follow the problem files; these are the defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ShootingConfig {
    pub mode: DiscrepancyMode,
    /// Convergence criterion on `d2 = 1 - |<target|psi(T)>|`.
    pub tol: f64,
    pub max_iters: usize,
    /// Relative finite-difference step for Jacobian columns.
    pub fd_epsilon: f64,
    /// Relative singular-value floor for the pseudo-inverse.
    pub svd_floor: f64,
    /// Integrator resolution.
    pub steps_per_unit_time: f64,
    pub min_steps: usize,
    /// Jacobian column workers; `None` reads QBE_WORKERS or detects.
    pub workers: Option<usize>,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            mode: DiscrepancyMode::default(),
            tol: 1e-5,
            max_iters: 100,
            fd_epsilon: 1e-6,
            svd_floor: 1e-8,
            steps_per_unit_time: crate::dynamics::DEFAULT_STEPS_PER_UNIT,
            min_steps: 400,
            workers: None,
        }
    }
}

/// A boundary value problem plus solver configuration.
#[derive(Debug, Clone)]
pub struct ShootingProblem {
    pub problem: ControlProblem,
    pub config: ShootingConfig,
}

impl ShootingProblem {
    pub fn new(problem: ControlProblem) -> Self {
        Self { problem, config: ShootingConfig::default() }
    }

    pub fn with_config(problem: ControlProblem, config: ShootingConfig) -> Self {
        Self { problem, config }
    }

    fn steps_for(&self, t: f64) -> usize {
        ((t * self.config.steps_per_unit_time).ceil() as usize).max(self.config.min_steps)
    }
}

/// Initial unknowns for the shooter.
#[derive(Debug, Clone)]
pub struct ShootingGuess {
    pub phi_prime_0: CVector,
    pub time: f64,
}

impl From<(QbeState, f64)> for ShootingGuess {
    fn from((state, time): (QbeState, f64)) -> Self {
        Self { phi_prime_0: state.phi_prime, time }
    }
}

/// Outcome of the gauge projection of a costate guess.
#[derive(Debug, Clone)]
pub struct GaugeFixed {
    pub phi_prime_0: CVector,
    pub lambda_0: f64,
    pub u0: DVector<f64>,
    /// Multipliers on the fixed block, `lambda'_j = -D'_j - lambda Q_j`.
    pub lambda_prime_0: Vec<f64>,
}

/// Project out the `psi0`-parallel component of `phi'_0`, then derive the
/// initial multiplier and controls from the controllable block of `D'`
/// (choosing `lambda_0 > 0`; the sign is a gauge convention).
pub fn gauge_fix(
    phi_prime_0: &CVector,
    psi0: &CVector,
    problem: &ControlProblem,
) -> Result<GaugeFixed, ShootingError> {
    let overlap = inner(psi0, phi_prime_0);
    let mut phi = phi_prime_0.clone();
    for i in 0..phi.len() {
        phi[i] -= overlap * psi0[i];
    }
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let dprime: Vec<f64> =
        (0..basis.len()).map(|j| 2.0 * basis.action(j).matrix_element(&phi, psi0).re).collect();
    let dc_norm: f64 = dprime[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
    if dc_norm < 1e-12 {
        return Err(ShootingError::ZeroControl);
    }
    let lambda_0 = dc_norm / split.omega_prime();
    let u0 = DVector::from_iterator(n, dprime[..n].iter().map(|d| -d / lambda_0));
    let lambda_prime_0: Vec<f64> = (n..basis.len())
        .map(|j| -dprime[j] - lambda_0 * split.couplings()[j - n])
        .collect();
    Ok(GaugeFixed { phi_prime_0: phi, lambda_0, u0, lambda_prime_0 })
}

/// Discrepancy vector and the scalar summaries
/// `d1 = ||psi(T) - psi_target||` (after phase alignment) and
/// `d2 = 1 - |<psi_target|psi(T)>|`.
pub fn discrepancy(
    psi_t: &CVector,
    psi_target: &CVector,
    mode: DiscrepancyMode,
) -> (DVector<f64>, f64, f64) {
    let dim = psi_t.len();
    let ov = inner(psi_target, psi_t);
    let mag = ov.norm();
    let phase = if mag > 1e-300 { ov / C64::new(mag, 0.0) } else { C64::new(1.0, 0.0) };
    let aligned = psi_t * phase.conj();
    let d2 = 1.0 - mag;
    let diff = &aligned - psi_target;
    let d1 = diff.norm();
    let x = match mode {
        DiscrepancyMode::ComponentDifference => {
            let mut x = DVector::zeros(2 * dim);
            for i in 0..dim {
                x[i] = diff[i].re;
                x[dim + i] = diff[i].im;
            }
            x
        }
        DiscrepancyMode::ProjectiveFidelity => {
            let proj = &aligned - psi_target * inner(psi_target, &aligned);
            let mut x = DVector::zeros(2 * dim + 1);
            for i in 0..dim {
                x[i] = proj[i].re;
                x[dim + i] = proj[i].im;
            }
            x[2 * dim] = d2;
            x
        }
    };
    (x, d1, d2)
}

struct Evaluation {
    x_vec: DVector<f64>,
    d1: f64,
    d2: f64,
}

fn pack(phi: &CVector, time: f64) -> DVector<f64> {
    let dim = phi.len();
    let mut x = DVector::zeros(2 * dim + 1);
    for i in 0..dim {
        x[i] = phi[i].re;
        x[dim + i] = phi[i].im;
    }
    x[2 * dim] = time;
    x
}

fn unpack(x: &DVector<f64>) -> (CVector, f64) {
    let dim = (x.len() - 1) / 2;
    let mut phi = CVector::zeros(dim);
    for i in 0..dim {
        phi[i] = C64::new(x[i], x[dim + i]);
    }
    (phi, x[x.len() - 1])
}

fn evaluate(sp: &ShootingProblem, x: &DVector<f64>, steps: usize) -> Result<Evaluation, ShootingError> {
    let (phi, time) = unpack(x);
    if !(time.is_finite() && time > 0.0) {
        return Err(ShootingError::Dynamics(DynamicsError::LambdaZero { t: 0.0, lambda: 0.0 }));
    }
    let fixed = gauge_fix(&phi, sp.problem.psi0(), &sp.problem)?;
    let state = QbeState::new(
        sp.problem.psi0().clone(),
        fixed.phi_prime_0,
        fixed.u0,
        fixed.lambda_0,
    );
    let final_state = propagate(&state, &sp.problem, time, steps)?;
    let (x_vec, d1, d2) = discrepancy(&final_state.psi, sp.problem.psi_target(), sp.config.mode);
    Ok(Evaluation { x_vec, d1, d2 })
}

fn worker_count(config: &ShootingConfig, columns: usize) -> usize {
    let configured = config.workers.or_else(|| {
        std::env::var("QBE_WORKERS").ok().and_then(|v| v.parse().ok())
    });
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    configured.unwrap_or(available).clamp(1, columns.max(1))
}

/// Finite-difference Jacobian of the discrepancy with respect to all
/// unknowns (`phi'_0` components, then `T`). Columns are independent
/// perturbed integrations and are evaluated concurrently; failed columns are
/// zeroed with a warning count rather than aborting the iteration.
///
/// One-sided differences by default; `central` doubles the cost and kills
/// the leading truncation error (used to verify columns and to break
/// noise-floor stalls near convergence).
pub fn fd_jacobian(
    sp: &ShootingProblem,
    x: &DVector<f64>,
    steps: usize,
    base: &DVector<f64>,
    central: bool,
) -> (DMatrix<f64>, usize) {
    let n_unknowns = x.len();
    let rows = base.len();
    let dim = (n_unknowns - 1) / 2;
    let phi_scale = {
        let s: f64 = x.iter().take(2 * dim).map(|v| v * v).sum();
        (s / (2 * dim) as f64).sqrt().max(1e-6)
    };
    let deltas: Vec<f64> = (0..n_unknowns)
        .map(|j| {
            if j < 2 * dim {
                sp.config.fd_epsilon * (x[j].abs() + phi_scale)
            } else {
                sp.config.fd_epsilon * x[j].abs().max(1.0)
            }
        })
        .collect();

    let workers = worker_count(&sp.config, n_unknowns);
    let mut columns: Vec<Option<DVector<f64>>> = vec![None; n_unknowns];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let columns_mutex = std::sync::Mutex::new(&mut columns);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if j >= n_unknowns {
                    break;
                }
                let mut xp = x.clone();
                xp[j] += deltas[j];
                let col = if central {
                    let mut xm = x.clone();
                    xm[j] -= deltas[j];
                    match (evaluate(sp, &xp, steps), evaluate(sp, &xm, steps)) {
                        (Ok(p), Ok(m)) => Some((p.x_vec - m.x_vec) / (2.0 * deltas[j])),
                        _ => None,
                    }
                } else {
                    evaluate(sp, &xp, steps).ok().map(|ev| (ev.x_vec - base) / deltas[j])
                };
                let mut guard = columns_mutex.lock().unwrap();
                guard[j] = col;
            });
        }
    });

    let mut jac = DMatrix::zeros(rows, n_unknowns);
    let mut failed = 0;
    for (j, col) in columns.into_iter().enumerate() {
        match col {
            Some(c) => jac.set_column(j, &c),
            None => {
                failed += 1;
                log::warn!("jacobian column {j} failed to integrate; treating as zero");
            }
        }
    }
    (jac, failed)
}

/// Finite difference of the discrepancy along an arbitrary direction in
/// unknown space (used to probe neutral directions).
pub fn fd_directional(
    sp: &ShootingProblem,
    x: &DVector<f64>,
    direction: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>, ShootingError> {
    let steps = sp.steps_for(x[x.len() - 1]);
    let base = evaluate(sp, x, steps)?;
    let xp = x + direction * eps;
    let pert = evaluate(sp, &xp, steps)?;
    Ok((pert.x_vec - base.x_vec) / eps)
}

/// One iteration record for logs and convergence-rate analysis.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub d1: f64,
    pub d2: f64,
    pub step_scale: f64,
    pub discarded: usize,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct JacobianReport {
    pub singular_values: Vec<f64>,
    pub discarded: usize,
    pub failed_columns: usize,
}

/// Converged (or best-effort) solution of the boundary value problem.
#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub phi_prime_0: CVector,
    pub lambda_0: f64,
    pub time: f64,
    pub d1: f64,
    pub d2: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub jacobian_report: JacobianReport,
    pub trajectory: Trajectory,
    pub converged: bool,
}

const DAMPING_LIMIT: usize = 8;
const DAMPING_TRIGGER: f64 = 10.0;

/// Solve the boundary value problem by Newton iteration from the guess.
///
/// On success the returned initial condition integrates to the target within
/// `tol` (measured by `d2`). `MaxItersExceeded` carries the best iterate and
/// its full history.
pub fn shoot(sp: &ShootingProblem, guess: &ShootingGuess) -> Result<ShootingResult, ShootingError> {
    // The overall scale of phi'_0 is the U2 gauge orbit; pin it to keep the
    // Newton iteration well conditioned no matter what the caller passes in.
    let phi_scale = guess.phi_prime_0.norm();
    if phi_scale <= 0.0 {
        return Err(ShootingError::ZeroControl);
    }
    let mut x = pack(&(&guess.phi_prime_0 / C64::new(phi_scale, 0.0)), guess.time);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut report = JacobianReport::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut use_central = false;

    for iter in 0..sp.config.max_iters {
        iterations = iter + 1;
        let time = x[x.len() - 1];
        let steps = sp.steps_for(time);
        let base = evaluate(sp, &x, steps)?;
        if best.as_ref().map(|(d, _)| base.d2 < *d).unwrap_or(true) {
            best = Some((base.d2, x.clone()));
        }
        if base.d2 <= sp.config.tol {
            history.push(IterationRecord {
                iteration: iter,
                d1: base.d1,
                d2: base.d2,
                step_scale: 0.0,
                discarded: report.discarded,
            });
            converged = true;
            break;
        }

        let (jac, failed) = fd_jacobian(sp, &x, steps, &base.x_vec, use_central);
        let svd = jac.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        if sigma_max <= 0.0 {
            return Err(ShootingError::SingularJacobian);
        }
        let floor = sp.config.svd_floor * sigma_max;
        let kept: Vec<f64> =
            svd.singular_values.iter().cloned().filter(|&s| s > floor).collect();
        let discarded = svd.singular_values.len() - kept.len();
        if kept.is_empty() {
            return Err(ShootingError::SingularJacobian);
        }
        report = JacobianReport {
            singular_values: svd.singular_values.iter().cloned().collect(),
            discarded,
            failed_columns: failed,
        };

        // Least-squares Newton step with the neutral directions removed.
        let u = svd.u.as_ref().expect("svd with u");
        let vt = svd.v_t.as_ref().expect("svd with v_t");
        let mut delta = DVector::zeros(x.len());
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= floor {
                continue;
            }
            let coeff = -u.column(k).dot(&base.x_vec) / s;
            delta += vt.row(k).transpose() * coeff;
        }

        // Damped update: back off when d2 inflates badly or the trial fails.
        // Early on, mild inflation is tolerated (the discrepancy may
        // fluctuate before the basin is reached); near convergence only
        // improving steps are accepted, and a fully stalled line search ends
        // the iteration at the best iterate instead of wandering.
        let near_convergence = base.d2 <= 100.0 * sp.config.tol;
        let mut scale = 1.0f64;
        let mut accepted = None;
        let mut fallback: Option<(DVector<f64>, Evaluation, f64)> = None;
        for _ in 0..=DAMPING_LIMIT {
            let mut trial = &x + &delta * scale;
            let t_idx = trial.len() - 1;
            if trial[t_idx] <= 0.05 * guess.time {
                trial[t_idx] = 0.05 * guess.time;
            }
            match evaluate(sp, &trial, steps) {
                Ok(ev) if ev.d2 < base.d2 => {
                    accepted = Some((trial, ev, scale));
                    break;
                }
                Ok(ev) => {
                    if !near_convergence
                        && ev.d2 <= DAMPING_TRIGGER * base.d2
                        && fallback.as_ref().map(|(_, f, _)| ev.d2 < f.d2).unwrap_or(true)
                    {
                        fallback = Some((trial, ev, scale));
                    }
                    scale /= 2.0;
                }
                Err(_) => {
                    scale /= 2.0;
                }
            }
        }
        let stalled = accepted.is_none() && fallback.is_none();
        if stalled {
            // One-sided truncation noise can pin the line search just above
            // tolerance; retry once with a central-difference Jacobian
            // before declaring the iterate final.
            if !use_central {
                use_central = true;
                continue;
            }
            history.push(IterationRecord {
                iteration: iter,
                d1: base.d1,
                d2: base.d2,
                step_scale: 0.0,
                discarded,
            });
            break;
        }
        let (trial, ev, used_scale) = accepted.or(fallback).expect("checked above");
        history.push(IterationRecord {
            iteration: iter,
            d1: base.d1,
            d2: base.d2,
            step_scale: used_scale,
            discarded,
        });
        if best.as_ref().map(|(d, _)| ev.d2 < *d).unwrap_or(true) {
            best = Some((ev.d2, trial.clone()));
        }
        x = trial;
        // Re-pin the gauge scale (the discrepancy is exactly invariant).
        let dim = (x.len() - 1) / 2;
        let norm: f64 = x.iter().take(2 * dim).map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..2 * dim {
                x[j] /= norm;
            }
        }
    }

    let (_, x_final) = best.expect("at least one evaluation");
    let (phi, time) = unpack(&x_final);
    let fixed = gauge_fix(&phi, sp.problem.psi0(), &sp.problem)?;
    let steps = sp.steps_for(time);
    let state = QbeState::new(
        sp.problem.psi0().clone(),
        fixed.phi_prime_0.clone(),
        fixed.u0.clone(),
        fixed.lambda_0,
    );
    let trajectory = integrate(&state, &sp.problem, time, steps)?;
    let (_, d1, d2) =
        discrepancy(&trajectory.samples.last().unwrap().psi, sp.problem.psi_target(), sp.config.mode);
    let result = ShootingResult {
        phi_prime_0: fixed.phi_prime_0,
        lambda_0: fixed.lambda_0,
        time,
        d1,
        d2,
        iterations,
        history,
        jacobian_report: report,
        trajectory,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        let d2 = result.d2;
        Err(ShootingError::MaxItersExceeded(sp.config.max_iters, d2, Box::new(result)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{family_solution, product_guess, QubitPlan};
    use crate::problem::{library, minus_x, plus_x, plus_y};

    #[test]
    fn discrepancy_zero_for_equal_and_phase_shifted_states() {
        let a = plus_y();
        for mode in [DiscrepancyMode::ComponentDifference, DiscrepancyMode::ProjectiveFidelity] {
            let (x, d1, d2) = discrepancy(&a, &a, mode);
            assert!(x.norm() < 1e-14 && d1 < 1e-14 && d2 < 1e-14);
            let shifted = &a * C64::new(0.0, 1.0);
            let (x, d1, d2) = discrepancy(&shifted, &a, mode);
            assert!(x.norm() < 1e-14 && d1 < 1e-14 && d2 < 1e-14);
        }
    }

    #[test]
    fn discrepancy_of_orthogonal_states_is_one() {
        let (_, _, d2) = discrepancy(&plus_x(), &minus_x(), DiscrepancyMode::ComponentDifference);
        assert!((d2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gauge_fix_is_idempotent_under_u1_orbit() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, _) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        let base = gauge_fix(&state.phi_prime, problem.psi0(), &problem).unwrap();
        let shifted = &state.phi_prime + problem.psi0() * C64::new(0.0, 0.37);
        let moved = gauge_fix(&shifted, problem.psi0(), &problem).unwrap();
        assert!((&base.phi_prime_0 - &moved.phi_prime_0).norm() < 1e-13);
        assert!((base.lambda_0 - moved.lambda_0).abs() < 1e-13);
        assert!((&base.u0 - &moved.u0).norm() < 1e-13);
        // Constraint holds exactly after projection.
        let re = inner(problem.psi0(), &base.phi_prime_0).re;
        assert!(re.abs() < 1e-15);
        // Budget is met to rounding.
        let w2 = problem.split().omega_prime_sq();
        assert!((base.u0.norm_squared() - w2).abs() / w2 < 1e-12);
    }

    #[test]
    fn gauge_fix_scaling_only_rescales_lambda() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, t_end) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        let base = gauge_fix(&state.phi_prime, problem.psi0(), &problem).unwrap();
        let scaled = state.phi_prime.clone() * C64::new(3.7, 0.0);
        let moved = gauge_fix(&scaled, problem.psi0(), &problem).unwrap();
        assert!((moved.lambda_0 - 3.7 * base.lambda_0).abs() < 1e-12);
        assert!((&moved.u0 - &base.u0).norm() < 1e-12);
        // The integrated state path is identical.
        let s1 = QbeState::new(problem.psi0().clone(), base.phi_prime_0.clone(), base.u0.clone(), base.lambda_0);
        let s2 = QbeState::new(problem.psi0().clone(), moved.phi_prime_0.clone(), moved.u0.clone(), moved.lambda_0);
        let f1 = propagate(&s1, &problem, t_end, 2000).unwrap();
        let f2 = propagate(&s2, &problem, t_end, 2000).unwrap();
        assert!((&f1.psi - &f2.psi).norm() < 1e-9);
    }

    #[test]
    fn gauge_fix_rejects_pure_gauge_costate() {
        let problem = library::single_qubit_planar(2.0);
        let phi = problem.psi0() * C64::new(0.0, 1.0);
        assert!(matches!(
            gauge_fix(&phi, problem.psi0(), &problem).unwrap_err(),
            ShootingError::ZeroControl
        ));
    }

    #[test]
    fn jacobian_gauge_direction_is_neutral() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, t_end) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        let sp = ShootingProblem::new(problem.clone());
        let x = pack(&state.phi_prime, t_end);
        // Direction i*psi0 in the phi block.
        let dim = problem.dim();
        let mut dir = DVector::zeros(2 * dim + 1);
        for i in 0..dim {
            dir[i] = -problem.psi0()[i].im;
            dir[dim + i] = problem.psi0()[i].re;
        }
        let col = fd_directional(&sp, &x, &dir, 1e-6).unwrap();
        // Compare against a generic direction's magnitude.
        let mut generic = DVector::zeros(2 * dim + 1);
        generic[0] = 1.0;
        let gcol = fd_directional(&sp, &x, &generic, 1e-6).unwrap();
        assert!(col.norm() < 1e-6 * gcol.norm().max(1.0), "gauge column {:e}", col.norm());
    }

    #[test]
    fn one_sided_jacobian_agrees_with_central_differences() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, t_end) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        // Move off the solution a bit so the Jacobian is generic.
        let mut phi = state.phi_prime.clone();
        phi[0] += C64::new(0.05, -0.03);
        let mut sp = ShootingProblem::new(problem);
        sp.config.fd_epsilon = 1e-6;
        let x = pack(&phi.normalize(), t_end);
        let steps = sp.steps_for(t_end);
        let base = evaluate(&sp, &x, steps).unwrap();
        let (one_sided, _) = fd_jacobian(&sp, &x, steps, &base.x_vec, false);
        sp.config.fd_epsilon = 5e-7;
        let (central, _) = fd_jacobian(&sp, &x, steps, &base.x_vec, true);
        let mut worst: f64 = 0.0;
        for j in 0..one_sided.ncols() {
            let c = central.column(j);
            let o = one_sided.column(j);
            let denom = c.norm().max(1e-6 * central.norm());
            worst = worst.max((o - c).norm() / denom);
        }
        assert!(worst <= 5e-3, "column deviation {worst:e}");
    }

    #[test]
    fn exact_guess_converges_immediately() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let guess: ShootingGuess = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap().into();
        let mut config = ShootingConfig::default();
        config.tol = 1e-9;
        let sp = ShootingProblem::with_config(problem, config);
        let result = shoot(&sp, &guess).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2, "took {} iterations", result.iterations);
        assert!(result.d2 <= 1e-9);
    }

    #[test]
    fn perturbed_guess_recovers_the_oscillating_solution() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, t_end) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        // Deterministic ~10% relative perturbation.
        let mut phi = state.phi_prime.clone();
        let scale = phi.norm() / (phi.len() as f64).sqrt();
        for (i, v) in phi.iter_mut().enumerate() {
            let eps = 0.1 * scale;
            *v += C64::new(eps * ((i * 37 + 5) % 7) as f64 / 7.0, -eps * ((i * 53 + 11) % 5) as f64 / 5.0);
        }
        let guess = ShootingGuess { phi_prime_0: phi, time: t_end * 1.1 };
        let sp = ShootingProblem::new(problem);
        let result = shoot(&sp, &guess).unwrap();
        assert!(result.converged);
        assert!(result.d2 <= 1e-5);
        assert!((result.time - t_end).abs() < 1e-2 * t_end, "T = {} vs {}", result.time, t_end);
        // At least one neutral direction was discarded on every iteration.
        assert!(result.jacobian_report.discarded >= 1);
    }
}
