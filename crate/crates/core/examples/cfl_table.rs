//! Time steps `√2 / C_inv` of the coarse space and of the graded fine space
//! on levels 1 to 5, and their ratio.

use lodwave::study::{cmd_cfl_table, StudyConfig};

fn main() -> lodwave::Result<()> {
    let config = StudyConfig {
        output_dir: "out/cfl".into(),
        ..StudyConfig::default()
    };
    println!("level  ndof_H  ndof_h        dt      dt_h   dt_h/dt");
    let rows = cmd_cfl_table(&config)?;
    for r in &rows {
        println!(
            "{:>5} {:>7} {:>7} {:.3e} {:.3e} {:>9.4}",
            r.level,
            r.coarse_ndof,
            r.fine_ndof,
            r.dt,
            r.dt_h,
            r.ratio()
        );
    }
    for w in rows.windows(2) {
        println!(
            "dt shrinks by {:.3} from level {} to {}",
            w[1].dt / w[0].dt,
            w[0].level,
            w[1].level
        );
    }
    Ok(())
}
