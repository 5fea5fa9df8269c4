//! Shear flows: the dispersion relation and conjugate pairs.

use twolayer_waves::model::{bifurcation_speed, conjugate_height, conjugate_speed, dispersion, min_bore_amplitude};
use twolayer_waves::{PhysParams, ShearFlow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("bifurcation speeds c_n at H = 0.5, omega0 = 0.3");
    println!("{:>6} {:>10} {:>10} {:>10}", "k", "n=1", "n=2", "n=3");
    for k in [0.2, 0.5, 1.0, 2.0, std::f64::consts::PI] {
        let p = PhysParams::new(k, 0.5, 0.3)?;
        let c: Vec<String> = (1..=3).map(|n| format!("{:10.6}", bifurcation_speed(&p, n))).collect();
        println!("{k:6.3} {}", c.join(" "));
    }

    // A long wave near a conjugate pair: the crest and trough approach the two heights.
    let p = PhysParams::new(0.2, 0.3, 0.525)?;
    let crest = 0.861023;
    let flow = ShearFlow { h: crest, c: conjugate_speed(crest, p.omega0) };
    let other = flow.conjugate(p.omega0);
    println!();
    println!("k = 0.2, H = 0.3, omega0 = 0.525: q1 = {:.6}", dispersion(&p, 1));
    println!("conjugate of h = {crest}: h~ = {:.6} (direct {:.6}), speed {:.6}", other.h, conjugate_height(crest, p.omega0), other.c);
    println!("bores need amplitude above {:.6}", min_bore_amplitude(&p));
    for y in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!(
            "  y = {y:4.2}: U = {:8.5} / {:8.5}, Psi = {:8.5} / {:8.5}",
            flow.velocity(p.omega0, y),
            other.velocity(p.omega0, y),
            flow.stream_function(p.omega0, y),
            other.stream_function(p.omega0, y)
        );
    }
    Ok(())
}
