//! The L-shape wave experiment `u = sin(πt) r^{2/3} sin(2θ/3)`: accumulated
//! H¹ errors of leapfrog in the coarse, reduced and mass-lumped reduced
//! spaces, all at the coarse CFL step, and their rates against `ndof`.
//!
//! `cargo run --release --example convergence -- [max_level]`

use lodwave::study::{cmd_convergence, StudyConfig};

fn main() -> lodwave::Result<()> {
    let max_level = std::env::args()
        .nth(1)
        .map_or(4, |s| s.parse().expect("level is an integer"));
    let config = StudyConfig {
        levels: (1, max_level),
        output_dir: "out/convergence".into(),
        ..StudyConfig::default()
    };
    let report = cmd_convergence(&config)?;
    println!("level space            ndof        dt  steps     error");
    for r in &report.rows {
        println!(
            "{:>5} {:<15} {:>6} {:.3e} {:>6} {:.3e}",
            r.level, r.space, r.ndof, r.dt, r.n_steps, r.accumulated_error
        );
    }
    for (space, slope) in &report.slopes {
        println!("{space}: error ~ ndof^{slope:.3}");
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
