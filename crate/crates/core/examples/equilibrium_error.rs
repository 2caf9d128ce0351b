//! Static deflection caused by a gravity-model error across impedance
//! stiffnesses: stiffer rendering hides the same model error better.

use gpmix::evaluation::equilibrium_error_report;

fn main() -> gpmix::Result<()> {
    let target = 0.8;
    let error = |th: f64| 0.5 * th.sin();
    let stiffness: Vec<f64> = (0..=8).map(|i| 10f64.powf(i as f64 / 4.0)).collect();
    println!("  K (N·m/rad)  deflection (rad)  iterations");
    for row in equilibrium_error_report(error, target, &stiffness)? {
        println!(
            "{:12.3} {:17.6} {:11}{}",
            row.stiffness,
            row.deflection,
            row.iterations,
            if row.converged { "" } else { "  (not converged)" }
        );
    }
    Ok(())
}
