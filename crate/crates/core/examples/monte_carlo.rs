//! Runs the default Monte Carlo study and prints the pooled in-bound rates.

use deskew::simulation::{run_monte_carlo, SimConfig};

fn main() -> Result<(), deskew::Error> {
    // optional TOML overrides, e.g. `jitter_std = 0.0`
    let cfg: SimConfig = match std::env::args().nth(1) {
        Some(overrides) => toml::from_str(&overrides).expect("invalid overrides"),
        None => SimConfig::default(),
    };
    let out = run_monte_carlo(&cfg)?;
    let r = &out.report;
    println!(
        "3D: {} points, in-bound {:.2}%, mean NEES {:.3}, below {} above {}",
        r.points_3d,
        100.0 * r.nees_3d.in_bound_rate,
        r.nees_3d.mean_nees,
        r.nees_3d.below_lower,
        r.nees_3d.above_upper
    );
    if let Some(s) = &r.nees_2d {
        println!(
            "2D: {} points, in-bound {:.2}%, mean NEES {:.3}, below {} above {}",
            r.points_2d,
            100.0 * s.in_bound_rate,
            s.mean_nees,
            s.below_lower,
            s.above_upper
        );
    }
    println!(
        "mean 3D error {:.4} m (uncorrected {:.4} m), max 3D error {:.3e} m, max pixel error {:.3e} px",
        r.mean_error_3d, r.mean_uncorrected_error_3d, r.max_error_3d, r.max_error_2d
    );
    Ok(())
}
