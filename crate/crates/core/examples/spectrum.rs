//! Eigenvalues of the stiffness/mass pencil in the fine, coarse and reduced
//! spaces on a corner-refined mesh pair. The reduced space keeps the low
//! modes of the fine space while its largest eigenvalue stays at coarse
//! scale.

use lodwave::study::{cmd_spectrum, StudyConfig};

fn main() -> lodwave::Result<()> {
    let config = StudyConfig {
        output_dir: "out/spectrum".into(),
        ..StudyConfig::default()
    };
    let r = cmd_spectrum(&config)?;
    println!(
        "H = {:.3e}, h_min = {:.3e}, m = {}; dimensions fine {} coarse {} reduced {}",
        r.coarse_h,
        r.fine_h_min,
        r.localization,
        r.fine.len(),
        r.coarse.len(),
        r.reduced.len()
    );
    println!("mode        fine   coarse err  reduced err");
    for (i, (c, red)) in r.low_errors.iter().enumerate() {
        println!("{i:>4} {:>11.4} {c:>12.3e} {red:>12.3e}", r.fine[i]);
    }
    let last = |v: &Vec<f64>| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "largest eigenvalue: fine {:.3e}, coarse {:.3e}, reduced {:.3e}",
        last(&r.fine),
        last(&r.coarse),
        last(&r.reduced)
    );
    Ok(())
}
