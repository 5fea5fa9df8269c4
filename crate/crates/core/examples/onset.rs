//! Newton near the primary bifurcation point against linear theory.
//!
//! The mean interface speed departs from the bifurcation value at second
//! order in the amplitude, so the gap should shrink fourfold per halving.

use twolayer_waves::model::{bifurcation_speed, dispersion, linear_guess};
use twolayer_waves::{newton_solve, ClosureSpec, CollocationGrid, NewtonOptions, PhysParams, System};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PhysParams::new(2.0, 0.5, 0.3)?;
    let n = 64;
    let grid = CollocationGrid::new(n);
    let c0 = bifurcation_speed(&params, 1);
    println!("q1 = {:.6}, c0 = {c0:.6}", dispersion(&params, 1));
    println!("{:>8} {:>4} {:>10} {:>12} {:>10}", "A", "it", "residual", "u0 - c0", "Y1 - A/2");
    for amp in [0.04, 0.02, 0.01, 0.005] {
        let system = System::new(params, &grid, ClosureSpec::amplitude(amp));
        let res = newton_solve(&system, &linear_guess(&params, amp, n), &NewtonOptions::default())?;
        let sol = &res.solution;
        println!(
            "{amp:8.3} {:4} {:10.2e} {:12.4e} {:10.2e}",
            res.iterations,
            res.final_residual,
            sol.u_hat[0] - c0,
            sol.y_hat[1] - 0.5 * amp
        );
    }
    Ok(())
}
