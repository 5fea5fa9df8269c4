//! Rebuilds the flow under a computed wave: stagnation points, invariants,
//! a grid-refinement check of the stream function and an SVG figure.
//!
//! ```text
//! cargo run --release --example flow_field -- 0.4 /tmp/flow.svg
//! ```

use twolayer_waves::continuation::{extend_branch, start_branch};
use twolayer_waves::fields::{self, StagnationKind};
use twolayer_waves::io::{flow_svg, FlowFigure};
use twolayer_waves::{ContinuationPolicy, FieldEvaluator, PhysParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let amp: f64 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(0.2);
    let params = PhysParams::new(2.0, 0.5, 0.3)?;
    let policy = ContinuationPolicy { target_amplitude: Some(amp), max_resolution: 256, ..Default::default() };
    let mut branch = start_branch(&params, &policy)?;
    extend_branch(&mut branch);
    let sol = &branch.last().solution;
    println!("A = {:.4} at N = {}", sol.amplitude(), sol.resolution());

    let ev = FieldEvaluator::new(sol, &params)?;
    let grid = fields::field_grid(&ev, 64, 64)?;
    let stagnation = fields::stagnation_points(&ev, &grid)?;
    for s in stagnation.iter().filter(|s| s.kind != StagnationKind::Degenerate) {
        println!("  {:?} {:?} at ({:.4}, {:.4})", s.layer, s.kind, s.x, s.y);
    }

    let inv = fields::invariants(&ev, &fields::stations(&params, 8))?;
    println!(
        "lower flux {:.8} (spread {:.1e}), upper flux {:.8} (spread {:.1e}), flow force {:.8} (spread {:.1e})",
        inv.m_lower[0], inv.spread_lower, inv.m_upper[0], inv.spread_upper, inv.flow_force[0], inv.spread_flow_force
    );
    let refinement = fields::pde_refinement(&ev, 64, 64)?;
    let (rd, rv) = refinement.ratios();
    println!("divergence and vorticity defects shrink by {rd:.3} and {rv:.3} on a grid twice as fine");
    println!("stream function spread along the interface: {:.1e}", grid.interface_spread());

    if let Some(path) = args.get(1) {
        let levels: Vec<f64> = (1..24).map(|i| grid.psi.iter().copied().fold(f64::INFINITY, f64::min) + i as f64 / 24.0 * psi_range(&grid.psi)).collect();
        let lines = fields::streamlines(&grid, &levels);
        let figure = FlowFigure::new(&params, sol.amplitude(), fields::interface_polyline(sol, &params, 400), lines, stagnation);
        std::fs::write(path, flow_svg(&figure))?;
        println!("wrote {path}");
    }
    Ok(())
}

fn psi_range(psi: &[f64]) -> f64 {
    let hi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = psi.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}
