use qbe::analytic::{family_solution, product_guess, QubitPlan};
use qbe::diagnostics::{fs_series, time_correlation};
use qbe::dynamics::derived;
use qbe::problem::library;
use qbe::relax::{relax, RelaxationSchedule};
use qbe::shooting::{ShootingConfig, ShootingGuess};

#[test]
fn j1_branch_geometry() {
    let w = 2.0 * 2.0f64.sqrt();
    let problem = library::heisenberg_pair_planar(1.0, w);
    let zero = problem.with_couplings(vec![0.0; 5]).unwrap();
    let fam = family_solution(2.0, 0, 1).unwrap();
    let plans = vec![
        QubitPlan::new(fam).with_field([0.0, 1.0, 0.0]),
        QubitPlan::new(fam).with_field([-1.0, 0.0, 0.0]),
    ];
    let guess: ShootingGuess = product_guess(&zero, &plans).unwrap().into();
    let config = ShootingConfig { steps_per_unit_time: 900.0, ..Default::default() };
    let out = relax(&problem, guess, &RelaxationSchedule::uniform(0.05), &config).unwrap();
    let traj = &out.result.trajectory;
    let fs = fs_series(traj, problem.psi_target());
    let corr = time_correlation(&fs);
    let des: Vec<f64> = traj.samples.iter().step_by(50).map(|s| derived(s, &problem).delta_e2.sqrt()).collect();
    let mean = des.iter().sum::<f64>() / des.len() as f64;
    let min = des.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = des.iter().cloned().fold(0.0f64, f64::max);
    eprintln!("T = {:.6}; corr(F,t) = {:.5}; deltaE mean {:.5} min {:.5} max {:.5}; T*mean = {:.5} (pi/2 = {:.5}); 2sqrt2*deltaE = {:.5}",
        out.result.time, corr, mean, min, max, out.result.time * mean, std::f64::consts::FRAC_PI_2, 2.0*2f64.sqrt()*mean);
}
