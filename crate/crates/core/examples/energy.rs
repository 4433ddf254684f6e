//! Free oscillations in all four spaces: the discrete leapfrog energy is
//! conserved to round-off over a thousand steps.

use lodwave::leapfrog::Space;
use lodwave::study::{cmd_energy, StudyConfig};

fn main() -> lodwave::Result<()> {
    let config = StudyConfig {
        levels: (1, 1),
        spaces: Space::ALL.to_vec(),
        output_dir: "out/energy".into(),
        ..StudyConfig::default()
    };
    for r in cmd_energy(&config)? {
        println!(
            "level {} {:<15} dt {:.3e} steps {:>5} relative drift {:.2e}",
            r.level, r.space, r.dt, r.n_steps, r.relative_drift
        );
    }
    Ok(())
}
