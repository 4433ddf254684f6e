use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lodwave::study::{self, exit_code, StudyConfig};
use lodwave::Result;

#[derive(Parser)]
#[command(
    name = "lodwave",
    version,
    about = "Wave equation studies on graded L-shape meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Level range, e.g. `1..5`.
    #[arg(long, global = true)]
    levels: Option<String>,
    /// Comma-separated spaces: coarse, fine, reduced, reduced_lumped.
    #[arg(long, global = true)]
    spaces: Option<String>,
    /// Localization parameter: an integer or `auto`.
    #[arg(long, global = true)]
    m: Option<String>,
    #[arg(long, global = true)]
    safety: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write coarse and graded fine meshes in the text format.
    Mesh,
    /// Accumulated errors and convergence slopes of the L-shape study.
    Convergence,
    /// Spectra of fine, coarse and reduced pencils.
    Spectrum,
    /// CFL time steps of coarse and fine spaces per level.
    CflTable,
    /// Energy error of localized correctors against m.
    CorrectorDecay,
    /// Discrete energy of free oscillations.
    Energy,
}

fn config(cli: &Cli) -> Result<StudyConfig> {
    let mut c = match &cli.config {
        Some(p) => StudyConfig::from_file(p)?,
        None => StudyConfig::default(),
    };
    let flags = [
        ("levels", &cli.levels),
        ("spaces", &cli.spaces),
        ("m", &cli.m),
        ("safety", &cli.safety),
        ("out", &cli.out),
        ("seed", &cli.seed),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            c.set(key, v)?;
        }
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let c = config(cli)?;
    match cli.command {
        Command::Mesh => {
            for (level, coarse, fine) in study::cmd_mesh(&c)? {
                println!(
                    "level {level}: coarse {} triangles, fine {} triangles, h_min {:.3e}",
                    coarse.n_triangles, fine.n_triangles, fine.h_min
                );
            }
        }
        Command::Convergence => {
            let r = study::cmd_convergence(&c)?;
            for row in &r.rows {
                println!(
                    "level {} {:<15} ndof {:>6} dt {:.3e} steps {:>5} error {:.4e}",
                    row.level, row.space, row.ndof, row.dt, row.n_steps, row.accumulated_error
                );
            }
            for (space, slope) in &r.slopes {
                println!("slope {space}: {slope:.3}");
            }
            for (level, space, reason) in &r.skipped {
                println!("skipped level {level} {space}: {reason}");
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Spectrum => {
            let r = study::cmd_spectrum(&c)?;
            println!(
                "H {:.3e}, h_min {:.3e}, m {}",
                r.coarse_h, r.fine_h_min, r.localization
            );
            for (i, (ce, re)) in r.low_errors.iter().enumerate() {
                println!("mode {i}: coarse {ce:.3e} reduced {re:.3e}");
            }
        }
        Command::CflTable => {
            for row in study::cmd_cfl_table(&c)? {
                println!(
                    "level {} dt {:.3e} dt_h {:.3e} ratio {:.4}",
                    row.level,
                    row.dt,
                    row.dt_h,
                    row.ratio()
                );
            }
        }
        Command::CorrectorDecay => {
            let r = study::cmd_corrector_decay(&c)?;
            for (m, e) in &r.errors {
                println!("m {m}: {e:.4e}");
            }
        }
        Command::Energy => {
            for row in study::cmd_energy(&c)? {
                println!(
                    "level {} {:<15} steps {:>5} drift {:.3e}",
                    row.level, row.space, row.n_steps, row.relative_drift
                );
            }
        }
    }
    println!("wrote {}", c.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
