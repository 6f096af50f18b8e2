//! Minimal piecewise-constant gradient-ascent pulse optimizer, used as the
//! convergence baseline against the shooting solver.
//!
//! Controls are constant on each of `segments` slices of `[0, T]`. The
//! fidelity `|<target|U_N ... U_1|psi0>|^2` is climbed by plain first-order
//! gradient ascent with backtracking; segment propagators are exact matrix
//! exponentials and the gradient uses the exact propagator derivative, so
//! the comparison carries no integrator error.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::linalg::{evolution_operator, inner, propagator_derivative, CMatrix, CVector};
use crate::problem::ControlProblem;

#[derive(Debug, Error)]
pub enum GrapeError {
    #[error("fidelity stalled: relative improvement below {eps:.1e} for {window} iterations")]
    Stagnation { window: usize, eps: f64 },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GrapeConfig {
    pub segments: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Convergence criterion on `d2 = 1 - |<target|psi(T)>|`.
    pub tol: f64,
    /// Rescale every segment's control vector onto the budget sphere after
    /// each update.
    pub project_budget: bool,
}

impl Default for GrapeConfig {
    fn default() -> Self {
        Self { segments: 40, learning_rate: 0.08, max_iters: 5000, tol: 1e-5, project_budget: true }
    }
}

/// Where the initial piecewise controls come from.
#[derive(Debug, Clone)]
pub enum GrapeInit {
    /// Per-segment control vectors (resampled as given).
    Controls(Vec<DVector<f64>>),
    /// Budget-normalized uniform random directions from a seeded generator.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct GrapeResult {
    /// One control vector per segment.
    pub controls: Vec<DVector<f64>>,
    /// `d2` after every accepted iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub d2: f64,
    pub converged: bool,
}

struct Propagation {
    /// Segment propagators.
    units: Vec<CMatrix>,
    /// `sigma_s = U_s ... U_1 psi0`, with `sigma_0 = psi0` (length s+1).
    forward: Vec<CVector>,
    /// `chi_s = U_{s+1}^† ... U_N^† target` (length s+1), `chi_N = target`.
    backward: Vec<CVector>,
    overlap: crate::linalg::C64,
}

fn propagate_all(problem: &ControlProblem, controls: &[DVector<f64>], dt: f64) -> Propagation {
    let split = problem.split();
    let n_seg = controls.len();
    let mut units = Vec::with_capacity(n_seg);
    let mut forward = Vec::with_capacity(n_seg + 1);
    forward.push(problem.psi0().clone());
    for c in controls {
        let u_slice: Vec<f64> = c.iter().copied().collect();
        let h = split.hamiltonian_unchecked(&u_slice);
        let u = evolution_operator(&h, dt);
        forward.push(&u * forward.last().unwrap());
        units.push(u);
    }
    let mut backward = vec![CVector::zeros(problem.dim()); n_seg + 1];
    backward[n_seg] = problem.psi_target().clone();
    for s in (0..n_seg).rev() {
        backward[s] = units[s].adjoint() * &backward[s + 1];
    }
    let overlap = inner(problem.psi_target(), &forward[n_seg]);
    Propagation { units, forward, backward, overlap }
}

/// Gradient of `f = |<target|psi(T)>|^2` with respect to every segment
/// control, via the exact propagator derivative.
fn gradient(problem: &ControlProblem, controls: &[DVector<f64>], dt: f64, prop: &Propagation) -> Vec<DVector<f64>> {
    let split = problem.split();
    let basis = split.basis();
    let n = split.n_controllable();
    let mut grads = Vec::with_capacity(controls.len());
    for (s, c) in controls.iter().enumerate() {
        let u_slice: Vec<f64> = c.iter().copied().collect();
        let h = split.hamiltonian_unchecked(&u_slice);
        let mut g = DVector::zeros(n);
        for j in 0..n {
            let du = propagator_derivative(&h, dt, &basis.matrix(j));
            // dc/du_j^(s) = <chi_s| dU_s |sigma_{s-1}>
            let dc = inner(&prop.backward[s + 1], &(&du * &prop.forward[s]));
            g[j] = 2.0 * (prop.overlap.conj() * dc).re;
        }
        grads.push(g);
        let _ = &prop.units;
    }
    grads
}

fn project(controls: &mut [DVector<f64>], omega_prime: f64) {
    for c in controls.iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            *c *= omega_prime / norm;
        }
    }
}

/// Optimize piecewise-constant controls toward the target state at fixed
/// flight time `T`. The history records `d2` per iteration; convergence is
/// `d2 <= tol`.
pub fn grape_optimize(
    problem: &ControlProblem,
    t_final: f64,
    config: &GrapeConfig,
    init: GrapeInit,
) -> Result<GrapeResult, GrapeError> {
    assert!(t_final > 0.0 && config.segments >= 1);
    let split = problem.split();
    let n = split.n_controllable();
    let w = split.omega_prime();
    let dt = t_final / config.segments as f64;

    let mut controls: Vec<DVector<f64>> = match init {
        GrapeInit::Controls(c) => {
            assert_eq!(c.len(), config.segments, "one control vector per segment");
            c
        }
        GrapeInit::Random(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..config.segments)
                .map(|_| {
                    let mut v = DVector::zeros(n);
                    for x in v.iter_mut() {
                        *x = rng.gen_range(-1.0..1.0);
                    }
                    if v.norm() < 1e-9 {
                        v[0] = 1.0;
                    }
                    v
                })
                .collect()
        }
    };
    if config.project_budget {
        project(&mut controls, w);
    }

    let d2_of = |p: &Propagation| 1.0 - p.overlap.norm();
    let mut prop = propagate_all(problem, &controls, dt);
    let mut d2 = d2_of(&prop);
    let mut history = vec![d2];
    let mut rate = config.learning_rate;
    let mut converged = d2 <= config.tol;
    let mut iterations = 0;
    const STAGNATION_WINDOW: usize = 50;
    const STAGNATION_EPS: f64 = 1e-12;
    let mut stagnant = 0usize;

    while !converged && iterations < config.max_iters {
        iterations += 1;
        let grads = gradient(problem, &controls, dt, &prop);
        // Backtracking ascent step on the fidelity.
        let mut step = rate;
        let mut improved = false;
        for _ in 0..25 {
            let mut trial: Vec<DVector<f64>> =
                controls.iter().zip(&grads).map(|(c, g)| c + g * step).collect();
            if config.project_budget {
                project(&mut trial, w);
            }
            let trial_prop = propagate_all(problem, &trial, dt);
            let trial_d2 = d2_of(&trial_prop);
            if trial_d2 < d2 {
                let rel = (d2 - trial_d2) / d2.max(1e-300);
                stagnant = if rel < STAGNATION_EPS { stagnant + 1 } else { 0 };
                controls = trial;
                prop = trial_prop;
                d2 = trial_d2;
                improved = true;
                // Gentle growth keeps the step near the backtracking edge.
                rate = (step * 1.5).min(10.0 * config.learning_rate);
                break;
            }
            step /= 2.0;
        }
        if !improved {
            stagnant += 1;
        }
        history.push(d2);
        if d2 <= config.tol {
            converged = true;
        }
        if stagnant >= STAGNATION_WINDOW {
            return Err(GrapeError::Stagnation { window: STAGNATION_WINDOW, eps: STAGNATION_EPS });
        }
    }

    Ok(GrapeResult { controls, history, iterations, d2, converged })
}

/// Resample a trajectory's continuous controls onto `segments` piecewise
/// values (segment midpoints).
pub fn controls_from_trajectory(
    traj: &crate::dynamics::Trajectory,
    segments: usize,
) -> Vec<DVector<f64>> {
    let n_samples = traj.samples.len();
    (0..segments)
        .map(|s| {
            let frac = (s as f64 + 0.5) / segments as f64;
            let idx = ((n_samples - 1) as f64 * frac).round() as usize;
            traj.samples[idx].u.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{family_solution, product_guess, QubitPlan};
    use crate::dynamics::integrate;
    use crate::problem::library;

    #[test]
    fn forward_backward_states_are_consistent() {
        let problem = library::yy_coupled_pair(0.3, 2.0);
        let controls: Vec<DVector<f64>> = (0..8)
            .map(|s| {
                let a = s as f64 * 0.4;
                let mut v = DVector::from_vec(vec![a.cos(), -a.sin(), 0.4, -0.2]);
                v *= problem.split().omega_prime() / v.norm();
                v
            })
            .collect();
        let prop = propagate_all(&problem, &controls, 0.3);
        // <chi_s|sigma_s> equals the total overlap at every boundary.
        for s in 0..=controls.len() {
            let v = inner(&prop.backward[s], &prop.forward[s]);
            assert!((v - prop.overlap).norm() < 1e-10, "segment {s}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let problem = library::yy_coupled_pair(0.5, 2.0);
        let segments = 20;
        let t_final = 2.2;
        let dt = t_final / segments as f64;
        let mut controls: Vec<DVector<f64>> = (0..segments)
            .map(|s| {
                let a = s as f64 * 0.3 + 0.2;
                DVector::from_vec(vec![a.cos(), a.sin(), (2.0 * a).cos(), (2.0 * a).sin()])
            })
            .collect();
        project(&mut controls, problem.split().omega_prime());
        let prop = propagate_all(&problem, &controls, dt);
        let grads = gradient(&problem, &controls, dt, &prop);
        let f_of = |c: &[DVector<f64>]| {
            let p = propagate_all(&problem, c, dt);
            p.overlap.norm_sqr()
        };
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for s in [0usize, 7, 19] {
            for j in 0..4 {
                let mut up = controls.clone();
                up[s][j] += eps;
                let mut down = controls.clone();
                down[s][j] -= eps;
                let fd = (f_of(&up) - f_of(&down)) / (2.0 * eps);
                let rel = (grads[s][j] - fd).abs() / fd.abs().max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn budget_projection_is_exact() {
        let problem = library::yy_coupled_pair(0.5, 2.0);
        let w = problem.split().omega_prime();
        let mut controls = vec![DVector::from_vec(vec![1.0, 2.0, -0.5, 0.1]); 4];
        project(&mut controls, w);
        for c in &controls {
            assert!((c.norm() - w).abs() < 1e-14);
        }
    }

    #[test]
    fn initialized_at_a_converged_solution_grape_stops_immediately() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 1, 2).unwrap();
        let (state, t_end) = product_guess(&problem, &[QubitPlan::new(fam)]).unwrap();
        let traj = integrate(&state, &problem, t_end, 3000).unwrap();
        let config = GrapeConfig { segments: 60, tol: 1e-4, ..Default::default() };
        let init = GrapeInit::Controls(controls_from_trajectory(&traj, 60));
        let result = grape_optimize(&problem, t_end, &config, init).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2, "took {}", result.iterations);
    }

    #[test]
    fn random_init_makes_progress_on_the_single_qubit_flip() {
        let problem = library::single_qubit_planar(2.0);
        let fam = family_solution(2.0, 0, 1).unwrap();
        let config =
            GrapeConfig { segments: 24, max_iters: 400, tol: 1e-3, ..Default::default() };
        let result = grape_optimize(&problem, fam.time * 3f64.sqrt(), &config, GrapeInit::Random(7)).unwrap();
        let start = result.history.first().copied().unwrap();
        assert!(result.d2 < start, "no progress: {start} -> {}", result.d2);
    }
}
