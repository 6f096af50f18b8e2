//! Homotopy continuation over interaction strength.
//!
//! Shooting needs a good starting point, and analytic starting points only
//! exist without interaction. So: solve at (near-)zero coupling from the
//! analytic guess, then walk the couplings toward their target values in
//! small increments, reusing each stage's converged `(phi'_0, T)` as the
//! next stage's guess. `T` is re-solved at every stage since it drifts with
//! the coupling strength.

use thiserror::Error;

use crate::problem::{ControlProblem, ProblemError};
use crate::shooting::{shoot, ShootingConfig, ShootingError, ShootingGuess, ShootingProblem, ShootingResult};

#[derive(Debug, Error)]
pub enum RelaxationError {
    #[error("stage at fraction {fraction:.4} failed after increment halving: {source}")]
    StageFailure {
        fraction: f64,
        #[source]
        source: ShootingError,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Shooting(#[from] ShootingError),
}

/// Coupling schedule: fractions of the target coupling vector, walked in
/// order. The final fraction is always 1.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RelaxationSchedule {
    /// Monotone increasing fractions in (0, 1]; the last entry must be 1.
    pub fractions: Vec<f64>,
    /// Smallest allowed increment when stages are adaptively split.
    pub min_increment: f64,
    /// Extra Newton polish of the final stage down to this tolerance
    /// (best effort; the stage tolerance still decides success).
    pub final_polish_tol: Option<f64>,
}

impl RelaxationSchedule {
    /// Uniform grid with the given step, e.g. step 0.01 gives fractions
    /// 0.01, 0.02, ..., 1.0.
    pub fn uniform(step: f64) -> Self {
        assert!(step > 0.0 && step <= 1.0);
        let n = (1.0 / step).round() as usize;
        let fractions = (1..=n).map(|i| i as f64 * step).collect();
        Self { fractions, min_increment: step / 16.0, final_polish_tol: Some(1e-9) }
    }

    /// Schedule for problems whose target couplings are already zero.
    pub fn trivial() -> Self {
        Self { fractions: vec![1.0], min_increment: 1e-3, final_polish_tol: Some(1e-9) }
    }

    fn validate(&self) {
        assert!(!self.fractions.is_empty(), "schedule has no stages");
        let mut prev = 0.0;
        for &f in &self.fractions {
            assert!(f > prev && f <= 1.0 + 1e-12, "fractions must increase into (0, 1]");
            prev = f;
        }
        assert!((prev - 1.0).abs() < 1e-12, "the final stage must reach the target couplings");
    }
}

/// Per-stage convergence summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StageSummary {
    pub fraction: f64,
    /// Euclidean norm of the stage coupling vector.
    pub coupling_norm: f64,
    pub iterations: usize,
    pub d2: f64,
    pub time: f64,
    pub lambda_0: f64,
}

/// Final result plus the per-stage record.
#[derive(Debug)]
pub struct RelaxationOutcome {
    pub result: ShootingResult,
    pub stages: Vec<StageSummary>,
}

fn scaled_problem(problem: &ControlProblem, fraction: f64) -> Result<ControlProblem, ProblemError> {
    let couplings: Vec<f64> =
        problem.split().couplings().iter().map(|q| q * fraction).collect();
    problem.with_couplings(couplings)
}

/// Walk the couplings of `problem` from (near) zero to their target values,
/// starting from `guess` (which should solve, or nearly solve, the
/// zero-coupling problem). When a stage fails to converge, the increment is
/// halved down to `schedule.min_increment` before giving up; the error then
/// reports the last good stage through the summaries.
pub fn relax(
    problem: &ControlProblem,
    guess: ShootingGuess,
    schedule: &RelaxationSchedule,
    config: &ShootingConfig,
) -> Result<RelaxationOutcome, RelaxationError> {
    schedule.validate();
    let target_norm: f64 =
        problem.split().couplings().iter().map(|q| q * q).sum::<f64>().sqrt();

    // Nothing to relax: single polish at the target couplings.
    if target_norm == 0.0 {
        let sp = ShootingProblem::with_config(problem.clone(), config.clone());
        let result = shoot(&sp, &guess)?;
        let stages = vec![StageSummary {
            fraction: 1.0,
            coupling_norm: 0.0,
            iterations: result.iterations,
            d2: result.d2,
            time: result.time,
            lambda_0: result.lambda_0,
        }];
        return Ok(RelaxationOutcome { result, stages });
    }

    let mut stages: Vec<StageSummary> = Vec::new();
    let mut current_guess = guess;
    let mut result: Option<ShootingResult> = None;
    let mut reached = 0.0f64;

    let mut queue: std::collections::VecDeque<f64> = schedule.fractions.iter().copied().collect();
    while let Some(fraction) = queue.pop_front() {
        let stage_problem = scaled_problem(problem, fraction)?;
        let is_final = queue.is_empty();
        let mut stage_config = config.clone();
        if is_final {
            if let Some(polish) = schedule.final_polish_tol {
                stage_config.tol = polish.min(config.tol);
            }
        }
        let sp = ShootingProblem::with_config(stage_problem, stage_config);
        match shoot(&sp, &current_guess) {
            Ok(res) => {
                stages.push(StageSummary {
                    fraction,
                    coupling_norm: fraction * target_norm,
                    iterations: res.iterations,
                    d2: res.d2,
                    time: res.time,
                    lambda_0: res.lambda_0,
                });
                current_guess =
                    ShootingGuess { phi_prime_0: res.phi_prime_0.clone(), time: res.time };
                reached = fraction;
                result = Some(res);
            }
            Err(err) => {
                // Final-stage polish below the stage tolerance is best effort.
                if is_final {
                    if let ShootingError::MaxItersExceeded(_, d2, best) = &err {
                        if *d2 <= config.tol {
                            let res = (**best).clone();
                            stages.push(StageSummary {
                                fraction,
                                coupling_norm: fraction * target_norm,
                                iterations: res.iterations,
                                d2: res.d2,
                                time: res.time,
                                lambda_0: res.lambda_0,
                            });
                            result = Some(res);
                            reached = fraction;
                            continue;
                        }
                    }
                }
                let increment = fraction - reached;
                if increment / 2.0 >= schedule.min_increment {
                    let midpoint = reached + increment / 2.0;
                    queue.push_front(fraction);
                    queue.push_front(midpoint);
                    log::warn!(
                        "stage at fraction {fraction:.4} failed; inserting midpoint {midpoint:.4}"
                    );
                } else {
                    return Err(RelaxationError::StageFailure { fraction, source: err });
                }
            }
        }
    }

    Ok(RelaxationOutcome { result: result.expect("at least one stage ran"), stages })
}
