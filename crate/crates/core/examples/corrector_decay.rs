//! Energy error between the global corrector of a coarse hat function near
//! the re-entrant corner and its localization to `m`-layer patches.

use lodwave::study::{cmd_corrector_decay, StudyConfig};

fn main() -> lodwave::Result<()> {
    let level = std::env::args()
        .nth(1)
        .map_or(3, |s| s.parse().expect("level is an integer"));
    let config = StudyConfig {
        decay_level: level,
        output_dir: "out/decay".into(),
        ..StudyConfig::default()
    };
    let r = cmd_corrector_decay(&config)?;
    println!("level {}, coarse vertex {}", r.level, r.vertex);
    let mut prev = None;
    for &(m, e) in r.errors.iter().take(14) {
        match prev {
            Some(p) => println!("m {m:>2}: {e:.3e}  (ratio {:.3})", e / p),
            None => println!("m {m:>2}: {e:.3e}"),
        }
        prev = Some(e);
    }
    if let Some((m, e)) = r.errors.last() {
        println!("covering patch m = {m}: {e:.3e}");
    }
    Ok(())
}
