//! Classifies how branches end over a small (H, omega0) grid and draws the map.
//!
//! Each cell traces a full branch, so this takes a minute or two.
//!
//! ```text
//! cargo run --release --example sweep_map -- /tmp/sweep.svg
//! ```

use twolayer_waves::continuation::{sweep, ClassifyOptions};
use twolayer_waves::io::{sweep_csv, sweep_svg};
use twolayer_waves::ContinuationPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = std::f64::consts::PI;
    let depths = [0.45, 0.55];
    let omegas = [0.0, 1.0];
    let policy = ContinuationPolicy { max_resolution: 256, ..Default::default() };
    let cells = sweep(k, &depths, &omegas, &policy, &ClassifyOptions::default())?;
    print!("{}", sweep_csv(&cells));
    // The reflection (H, omega0) -> (1 - H, 1 - omega0) swaps crest and trough.
    for c in &cells {
        if let Some(m) = cells.iter().find(|m| (m.depth - (1.0 - c.depth)).abs() < 1e-12 && (m.omega0 - (1.0 - c.omega0)).abs() < 1e-12) {
            println!("H = {}, omega0 = {}: {} mirrors {}", c.depth, c.omega0, c.verdict, m.verdict);
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, sweep_svg(k, &cells))?;
        println!("wrote {path}");
    }
    Ok(())
}
