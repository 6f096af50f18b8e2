use qbe::analytic::{family_solution, product_guess, QubitPlan};
use qbe::problem::library;
use qbe::relax::{relax, RelaxationSchedule};
use qbe::shooting::{ShootingConfig, ShootingGuess};

#[test]
fn planar_heisenberg_branch_survey() {
    let w = 2.0 * 2.0f64.sqrt();
    let expected = 2.0f64.sqrt() * std::f64::consts::PI / w;
    let problem = library::heisenberg_pair_planar(1.0, w);
    let zero = problem.with_couplings(vec![0.0; 5]).unwrap();
    let fam = family_solution(2.0, 0, 1).unwrap();
    let combos: [([f64; 3], [f64; 3]); 4] = [
        ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0]),
        ([0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]),
        ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
        ([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]),
    ];
    let config = ShootingConfig { steps_per_unit_time: 900.0, ..Default::default() };
    let schedule = RelaxationSchedule::uniform(0.05);
    for (i, (f1, f2)) in combos.iter().enumerate() {
        let plans = vec![QubitPlan::new(fam).with_field(*f1), QubitPlan::new(fam).with_field(*f2)];
        let guess: ShootingGuess = product_guess(&zero, &plans).unwrap().into();
        match relax(&problem, guess, &schedule, &config) {
            Ok(out) => eprintln!(
                "combo {i}: T = {:.6} (vs {expected:.6}, diff {:+.4e}) d2 = {:.1e}",
                out.result.time, out.result.time - expected, out.result.d2
            ),
            Err(e) => eprintln!("combo {i}: FAILED {e}"),
        }
    }
}
