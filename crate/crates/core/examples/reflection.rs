//! Turning the channel upside down maps solutions to solutions.
//!
//! Solves (k, H, omega0, A) and (k, 1 - H, 1 - omega0, -A) independently and
//! compares the second with the reflected first, coefficient by coefficient
//! and through the stream function.

use twolayer_waves::continuation::{extend_branch, start_branch};
use twolayer_waves::fields::stream_function_grid;
use twolayer_waves::{Branch, ContinuationPolicy, PhysParams};

fn solve(params: &PhysParams, amp: f64) -> Result<Branch, Box<dyn std::error::Error>> {
    let policy = ContinuationPolicy { initial_amplitude: 0.01 * amp.signum(), target_amplitude: Some(amp), ..Default::default() };
    let mut branch = start_branch(params, &policy)?;
    extend_branch(&mut branch);
    Ok(branch)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PhysParams::new(2.0, 0.4, 0.3)?;
    let amp = 0.15;
    let direct = solve(&params, amp)?;
    let mirrored_params = params.reflected();
    let mirrored = solve(&mirrored_params, -amp)?;
    let (a, b) = (&direct.last().solution, &mirrored.last().solution);

    let (reflected, _) = a.reflect(&params);
    let n = reflected.resolution().min(b.resolution());
    let (x, y) = (reflected.resample(n).flatten(), b.resample(n).flatten());
    let gap = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("H = {} -> {}, omega0 = {} -> {}", params.depth, mirrored_params.depth, params.omega0, mirrored_params.omega0);
    println!("max coefficient difference after reflection: {gap:.2e}");

    let ga = stream_function_grid(a, &params, 64, 64)?;
    let gb = stream_function_grid(b, &mirrored_params, 64, 64)?;
    let mut worst = 0.0f64;
    for i in 0..ga.nx() {
        for j in 0..ga.ny() {
            worst = worst.max((ga.psi[ga.idx(i, j)] + gb.psi[gb.idx(i, gb.ny() - 1 - j)]).abs());
        }
    }
    println!("max |psi(x, y) + psi_reflected(x, 1 - y)| on 64x64: {worst:.2e}");
    Ok(())
}
