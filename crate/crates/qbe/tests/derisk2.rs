use qbe::analytic::{family_solution, product_guess, QubitPlan};
use qbe::diagnostics::{fs_series, time_correlation};
use qbe::problem::library;
use qbe::shooting::{shoot, ShootingConfig, ShootingGuess, ShootingProblem};

#[test]
fn optimal_time_law_across_budgets() {
    let omegas = [2.8284, 2.7803, 2.6926, 2.5554, 2.3601];
    let mut times = Vec::new();
    for &w in &omegas {
        let problem = library::heisenberg_pair(1.0, w);
        let zero = problem.with_couplings(vec![0.0, 0.0, 0.0]).unwrap();
        let omega_eff = w / 2.0f64.sqrt();
        let fam = family_solution(omega_eff, 0, 1).unwrap();
        let plans = vec![
            QubitPlan::new(fam).with_field([0.0, 0.0, 1.0]),
            QubitPlan::new(fam).with_field([0.0, 0.0, 1.0]),
        ];
        let guess: ShootingGuess = product_guess(&zero, &plans).unwrap().into();
        let config = ShootingConfig { steps_per_unit_time: 1500.0, ..Default::default() };
        let sp = ShootingProblem::with_config(problem, config);
        let result = shoot(&sp, &guess);
        match result {
            Ok(res) => {
                let fs = fs_series(&res.trajectory, sp.problem.psi_target());
                let corr = time_correlation(&fs);
                eprintln!("omega = {w}: T = {:.6} (guess {:.6}), d2 = {:.2e}, iters = {}, F-corr = {:.4}",
                    res.time, guess.time, res.d2, res.iterations, corr);
                times.push(res.time);
            }
            Err(e) => {
                eprintln!("omega = {w}: FAILED {e}");
                times.push(f64::NAN);
            }
        }
    }
    let expected = 2.0f64.sqrt() * std::f64::consts::PI / omegas[0];
    eprintln!("T(2.8284) = {:?} vs sqrt2*pi/omega = {expected}", times[0]);
    assert!((times[0] - expected).abs() <= 1e-3);
    for k in 1..times.len() {
        assert!(times[k] > times[k - 1], "not monotone: {times:?}");
    }
}
