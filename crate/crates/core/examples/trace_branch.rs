//! Traces a branch from the shear family and classifies how it ends.
//!
//! ```text
//! cargo run --release --example trace_branch -- 3.14159 0.45 0.0
//! ```

use std::time::Instant;

use twolayer_waves::continuation::{attach_field_diagnostics, classify_termination, extend_branch_with, start_branch, BranchEvent, ClassifyOptions};
use twolayer_waves::{ContinuationPolicy, PhysParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let (k, h, w) = match args[..] {
        [k, h, w, ..] => (k, h, w),
        _ => (std::f64::consts::PI, 0.45, 0.0),
    };
    let params = PhysParams::new(k, h, w)?;
    let policy = ContinuationPolicy { max_resolution: 256, target_amplitude: args.get(3).copied(), ..Default::default() };
    let clock = Instant::now();
    let mut branch = start_branch(&params, &policy)?;
    let stop = extend_branch_with(&mut branch, |ev| {
        if let BranchEvent::Point { point, .. } = ev {
            let d = &point.diagnostics;
            println!(
                "A = {:8.5}  N = {:4}  it = {:2}  speed = {:.4}  clearance = {:.4}/{:.4}  decay = {:.1e}  {:6.1?}",
                d.amplitude, d.resolution, d.iterations, d.min_interface_speed, d.lower_clearance, d.upper_clearance, d.decay_metric, clock.elapsed()
            );
        }
        Ok(())
    })?;
    attach_field_diagnostics(&mut branch, 5);
    let report = classify_termination(&branch, &ClassifyOptions::default())?;
    println!("stop: {stop:?}");
    println!("verdict: {} at amplitude {:.5}", report.verdict, report.terminal_amplitude);
    println!("Y(pi) = {:.6}", branch.last().solution.evaluate(k, std::f64::consts::PI).y);
    Ok(())
}
