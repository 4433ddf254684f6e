//! Builds the uniform coarse L-shape mesh of a level and its refinement
//! graded toward the re-entrant corner, prints their statistics and writes
//! both in the text mesh format.
//!
//! `cargo run --release --example lshape_mesh -- [level] [out_dir]`

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use lodwave::leapfrog::lshape_hierarchy;

fn main() -> lodwave::Result<()> {
    let mut args = std::env::args().skip(1);
    let level: usize = args
        .next()
        .map_or(Ok(2), |s| s.parse())
        .expect("level is an integer");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/mesh".into()));
    std::fs::create_dir_all(&out)?;

    let h = lshape_hierarchy(level)?;
    for (name, mesh) in [("coarse", &h.coarse), ("fine", &h.fine)] {
        let s = mesh.stats();
        println!(
            "{name:>6}: {:>6} vertices {:>6} triangles  h_max {:.3e}  h_min {:.3e}  min angle {:.1}°",
            s.n_vertices,
            s.n_triangles,
            s.h_max,
            s.h_min,
            s.min_angle.to_degrees()
        );
        let path = out.join(format!("lshape_l{level}_{name}.txt"));
        mesh.write_text(BufWriter::new(File::create(&path)?))?;
    }
    let refined = h.fine.n_triangles() as f64 / h.coarse.n_triangles() as f64;
    println!(
        "fine/coarse triangle ratio {refined:.2}, meshes in {}",
        out.display()
    );
    Ok(())
}
