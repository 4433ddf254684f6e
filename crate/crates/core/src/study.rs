//! Batch studies behind the command line: configuration, CSV outputs and the
//! convergence, spectrum, CFL, corrector-decay, energy and mesh commands.
//!
//! Configuration is a flat `key = value` file; command-line flags are applied
//! on top through the same keys. Every command writes plain CSV files into
//! the output directory, each one atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::assembly::DofMap;
use crate::error::{Error, Result};
use crate::leapfrog::{
    cfl_timestep_seeded, free_oscillation_problem, lshape_hierarchy, lshape_problem,
    lshape_spectrum_hierarchy, max_eigenvalue_seeded, relative_energy_drift, run_wave, step_count,
    Discretization, DtPolicy, RunOptions, Space, ERROR_QUAD_ORDER, SPECTRUM_COARSE_REFINEMENTS,
    SPECTRUM_CORNER_ROUNDS,
};
use crate::linsolve::full_spectrum;
use crate::mesh::{MeshHierarchy, MeshStats};
use crate::reduced_space::{CorrectorContext, Localization};

/// Choice of the localization parameter `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MPolicy {
    /// `m = ⌈-½ log₂ H⌉`, clamped to `[1, 3]`.
    Auto,
    Fixed(usize),
}

impl MPolicy {
    pub fn localization(self, hierarchy: &MeshHierarchy) -> Localization {
        match self {
            MPolicy::Auto => Localization::from_mesh_size(hierarchy.coarse.stats().h_max),
            MPolicy::Fixed(m) => Localization::Patch(m),
        }
    }
}

impl std::fmt::Display for MPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MPolicy::Auto => f.write_str("auto"),
            MPolicy::Fixed(m) => write!(f, "{m}"),
        }
    }
}

/// Parameters shared by all study commands.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub levels: (usize, usize),
    pub spaces: Vec<Space>,
    pub m_policy: MPolicy,
    pub safety: f64,
    /// Quadrature order of the H¹ error norms.
    pub quad_order: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Runs needing more steps are skipped.
    pub step_budget: usize,
    /// Minimum number of steps of the free-oscillation runs.
    pub energy_steps: usize,
    /// Level of the corrector-decay study.
    pub decay_level: usize,
    /// Corner bisection rounds of the spectrum mesh pair.
    pub spectrum_rounds: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            levels: (1, 5),
            spaces: vec![Space::Coarse, Space::Reduced, Space::ReducedLumped],
            m_policy: MPolicy::Auto,
            safety: 1.0,
            quad_order: ERROR_QUAD_ORDER,
            output_dir: PathBuf::from("out"),
            seed: 0x5eed,
            step_budget: 1_000_000,
            energy_steps: 1000,
            decay_level: 3,
            spectrum_rounds: SPECTRUM_CORNER_ROUNDS,
        }
    }
}

impl StudyConfig {
    /// Reads a `key = value` file on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} `{value}`"));
        match key {
            "levels" => self.levels = parse_levels(value)?,
            "spaces" => {
                self.spaces = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<Space>().map_err(|_| bad("space")))
                    .collect::<Result<_>>()?
            }
            "m" => {
                self.m_policy = match value {
                    "auto" => MPolicy::Auto,
                    v => MPolicy::Fixed(v.parse().map_err(|_| bad("m"))?),
                }
            }
            "safety" => self.safety = value.parse().map_err(|_| bad("safety"))?,
            "quad_order" => self.quad_order = value.parse().map_err(|_| bad("quad_order"))?,
            "out" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "step_budget" => self.step_budget = value.parse().map_err(|_| bad("step_budget"))?,
            "energy_steps" => self.energy_steps = value.parse().map_err(|_| bad("energy_steps"))?,
            "decay_level" => self.decay_level = value.parse().map_err(|_| bad("decay_level"))?,
            "spectrum_rounds" => {
                self.spectrum_rounds = value.parse().map_err(|_| bad("spectrum_rounds"))?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.levels;
        if a == 0 || a > b {
            return Err(Error::Config(format!(
                "level range {a}..{b} is empty or starts at 0"
            )));
        }
        if self.spaces.is_empty() {
            return Err(Error::Config("no spaces selected".into()));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!(
                "safety must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if self.m_policy == MPolicy::Fixed(0) {
            return Err(Error::Config("fixed m must be at least 1".into()));
        }
        if ![1, 2, 3, 5].contains(&self.quad_order) {
            return Err(Error::Config(format!(
                "quad_order must be 1, 2, 3 or 5, got {}",
                self.quad_order
            )));
        }
        if self.decay_level == 0 {
            return Err(Error::Config("decay_level must be at least 1".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.levels.0..=self.levels.1
    }

    /// Sorted `key=value` lines of every setting except the output directory.
    pub fn canonical(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("levels", format!("{}..{}", self.levels.0, self.levels.1));
        map.insert(
            "spaces",
            self.spaces
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("m", self.m_policy.to_string());
        map.insert("safety", format!("{:.16e}", self.safety));
        map.insert("quad_order", self.quad_order.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("step_budget", self.step_budget.to_string());
        map.insert("energy_steps", self.energy_steps.to_string());
        map.insert("decay_level", self.decay_level.to_string());
        map.insert("spectrum_rounds", self.spectrum_rounds.to_string());
        map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`StudyConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            step_budget: self.step_budget,
            error_quad_order: self.quad_order,
            seed: self.seed,
            ..RunOptions::default()
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Parses `a..b`, `a..=b` or a single level.
pub fn parse_levels(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("invalid level range `{s}`"));
    let s = s.trim();
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a = a.trim().parse().map_err(|_| bad())?;
    let b = b.trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

/// Process exit code for an error: 2 configuration, 4 instability, 3 other
/// failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::InvalidArgument(_) => 2,
        Error::Instability { .. } => 4,
        _ => 3,
    }
}

/// Formats a float for CSV output with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One row of the convergence summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub level: usize,
    pub ndof: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub space: Space,
    pub accumulated_error: f64,
    pub nnz_mass: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub rows: Vec<SummaryRow>,
    /// Least-squares slope of error against `ndof` per space.
    pub slopes: Vec<(Space, f64)>,
    /// `(level, space, reason)` of runs not performed.
    pub skipped: Vec<(usize, Space, String)>,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn slope(&self, space: Space) -> Option<f64> {
        self.slopes
            .iter()
            .find(|(s, _)| *s == space)
            .map(|&(_, v)| v)
    }

    pub fn row(&self, level: usize, space: Space) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.space == space)
    }
}

/// The L-shape convergence study: one leapfrog run per level and space.
pub fn cmd_convergence(config: &StudyConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let hash = config.hash();
    let mut report = ConvergenceReport::default();
    let options = config.run_options();
    let policy = DtPolicy::Cfl {
        safety: config.safety,
    };
    for level in config.levels() {
        let problem = lshape_problem(level)?;
        let h = &problem.hierarchy;
        let with_reduced = config.spaces.iter().any(|s| s.is_reduced());
        let disc = Discretization::new(h, config.m_policy.localization(h), with_reduced)?;
        for &space in &config.spaces {
            let ops = disc.operators(h, space)?;
            if space == Space::Fine {
                let dt =
                    cfl_timestep_seeded(&ops.a, &ops.mass.to_matrix(), config.safety, config.seed)?;
                let n = step_count(problem.t_end, dt);
                if n > config.step_budget {
                    report.skipped.push((
                        level,
                        space,
                        format!("{n} steps exceed the budget of {}", config.step_budget),
                    ));
                    continue;
                }
            }
            let run = run_wave(&problem, &ops, policy, options)?;
            report.warnings.extend(
                run.warnings
                    .iter()
                    .map(|w| format!("level {level} {space}: {w}")),
            );
            let mut csv = String::from("step,time,energy,h1_error\n");
            for (k, err) in run.step_errors.iter().enumerate() {
                let step = k + 1;
                let _ = writeln!(
                    csv,
                    "{step},{},{},{}",
                    fmt_f64(step as f64 * run.dt),
                    fmt_f64(run.energies[k]),
                    fmt_f64(*err)
                );
            }
            write_atomic(&config.path(&format!("run_l{level}_{space}.csv")), &csv)?;
            report.rows.push(SummaryRow {
                level,
                ndof: run.n_dofs,
                dt: run.dt,
                n_steps: run.n_steps,
                space,
                accumulated_error: run.accumulated_error,
                nnz_mass: run.nnz_mass,
            });
        }
    }
    let mut csv =
        String::from("level,ndof,dt,n_steps,space,accumulated_error,nnz_mass,config_hash\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{hash}",
            r.level,
            r.ndof,
            fmt_f64(r.dt),
            r.n_steps,
            r.space,
            fmt_f64(r.accumulated_error),
            r.nnz_mass
        );
    }
    write_atomic(&config.path("convergence_summary.csv"), &csv)?;

    let mut csv = String::from("space,slope,n_levels\n");
    for &space in &config.spaces {
        let rows: Vec<&SummaryRow> = report.rows.iter().filter(|r| r.space == space).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.ndof as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.accumulated_error).collect();
        if let Some(slope) = loglog_slope(&x, &y) {
            report.slopes.push((space, slope));
            let _ = writeln!(csv, "{space},{},{}", fmt_f64(slope), rows.len());
        }
    }
    write_atomic(&config.path("convergence_slopes.csv"), &csv)?;
    if !report.skipped.is_empty() {
        let mut csv = String::from("level,space,reason\n");
        for (level, space, reason) in &report.skipped {
            let _ = writeln!(csv, "{level},{space},{reason}");
        }
        write_atomic(&config.path("convergence_skipped.csv"), &csv)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub coarse_h: f64,
    pub fine_h_min: f64,
    pub localization: Localization,
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub reduced: Vec<f64>,
    /// `(coarse, reduced)` relative errors against the fine eigenvalues for
    /// the lowest modes.
    pub low_errors: Vec<(f64, f64)>,
}

/// Number of modes in the error table of [`cmd_spectrum`].
pub const SPECTRUM_LOW_MODES: usize = 10;

/// Full spectra of the fine, coarse and reduced pencils on the spectrum
/// mesh pair, and the relative errors of the lowest modes.
pub fn cmd_spectrum(config: &StudyConfig) -> Result<SpectrumReport> {
    config.validate()?;
    let h = lshape_spectrum_hierarchy(SPECTRUM_COARSE_REFINEMENTS, config.spectrum_rounds)?;
    spectrum_of(config, &h)
}

/// [`cmd_spectrum`] on a given hierarchy.
pub fn spectrum_of(config: &StudyConfig, h: &MeshHierarchy) -> Result<SpectrumReport> {
    let localization = config.m_policy.localization(h);
    let disc = Discretization::new(h, localization, true)?;
    let mut spectra = Vec::new();
    for space in [Space::Fine, Space::Coarse, Space::Reduced] {
        let ops = disc.operators(h, space)?;
        let eig = full_spectrum(&ops.a, &ops.mass.to_matrix())?;
        let mut csv = String::from("index,eigenvalue\n");
        for (i, l) in eig.iter().enumerate() {
            let _ = writeln!(csv, "{i},{}", fmt_f64(*l));
        }
        write_atomic(&config.path(&format!("spectrum_{space}.csv")), &csv)?;
        spectra.push(eig);
    }
    let reduced = spectra.pop().unwrap_or_default();
    let coarse = spectra.pop().unwrap_or_default();
    let fine = spectra.pop().unwrap_or_default();
    let n_low = SPECTRUM_LOW_MODES.min(coarse.len());
    let low_errors: Vec<(f64, f64)> = (0..n_low)
        .map(|i| {
            (
                (coarse[i] - fine[i]) / fine[i],
                (reduced[i] - fine[i]) / fine[i],
            )
        })
        .collect();
    let mut csv = String::from("index,fine,coarse_rel_error,reduced_rel_error\n");
    for (i, (c, r)) in low_errors.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{i},{},{},{}",
            fmt_f64(fine[i]),
            fmt_f64(*c),
            fmt_f64(*r)
        );
    }
    write_atomic(&config.path("spectrum_errors.csv"), &csv)?;
    Ok(SpectrumReport {
        coarse_h: h.coarse.stats().h_max,
        fine_h_min: h.fine.stats().h_min,
        localization,
        fine,
        coarse,
        reduced,
        low_errors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CflRow {
    pub level: usize,
    pub coarse_ndof: usize,
    pub fine_ndof: usize,
    pub h_max: f64,
    pub h_min: f64,
    pub dt: f64,
    pub dt_h: f64,
}

impl CflRow {
    pub fn ratio(&self) -> f64 {
        self.dt_h / self.dt
    }
}

/// `Δt = √2 / C_inv` of the coarse and the graded fine space per level.
pub fn cmd_cfl_table(config: &StudyConfig) -> Result<Vec<CflRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for level in config.levels() {
        let h = lshape_hierarchy(level)?;
        let disc = Discretization::new(&h, Localization::Global, false)?;
        let mut dts = [0.0; 2];
        let mut ndofs = [0; 2];
        for (i, space) in [Space::Coarse, Space::Fine].into_iter().enumerate() {
            let ops = disc.operators(&h, space)?;
            dts[i] = cfl_timestep_seeded(&ops.a, &ops.mass.to_matrix(), 1.0, config.seed)?;
            ndofs[i] = ops.n_dofs();
        }
        rows.push(CflRow {
            level,
            coarse_ndof: ndofs[0],
            fine_ndof: ndofs[1],
            h_max: h.coarse.stats().h_max,
            h_min: h.fine.stats().h_min,
            dt: dts[0],
            dt_h: dts[1],
        });
    }
    let mut csv = String::from("level,coarse_ndof,fine_ndof,h_max,h_min,dt,dt_h,ratio\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.level,
            r.coarse_ndof,
            r.fine_ndof,
            fmt_f64(r.h_max),
            fmt_f64(r.h_min),
            fmt_f64(r.dt),
            fmt_f64(r.dt_h),
            fmt_f64(r.ratio())
        );
    }
    write_atomic(&config.path("cfl_table.csv"), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub level: usize,
    /// Coarse vertex whose corrector is localized.
    pub vertex: usize,
    /// `(m, ‖∇(Cλ_z - C_m λ_z)‖)`.
    pub errors: Vec<(usize, f64)>,
}

/// Energy error of the localized corrector of one coarse hat for
/// `m = 1, 2, ...` until the patches cover the domain.
pub fn cmd_corrector_decay(config: &StudyConfig) -> Result<DecayReport> {
    config.validate()?;
    let level = config.decay_level;
    let h = lshape_hierarchy(level)?;
    let ctx = CorrectorContext::new(&h)?;
    let vertex = decay_vertex(&h);
    let mut e = vec![0.0; h.coarse.n_vertices()];
    e[vertex] = 1.0;
    let global = ctx.global_corrector(&e)?;
    let errors = (1..=ctx.covering_m().max(1))
        .map(|m| Ok((m, ctx.localization_error(vertex, m, &global)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("m,energy_error\n");
    for (m, err) in &errors {
        let _ = writeln!(csv, "{m},{}", fmt_f64(*err));
    }
    write_atomic(&config.path("corrector_decay.csv"), &csv)?;
    Ok(DecayReport {
        level,
        vertex,
        errors,
    })
}

/// Interior coarse vertex closest to the re-entrant corner.
pub fn decay_vertex(h: &MeshHierarchy) -> usize {
    let dofs = DofMap::new(&h.coarse);
    let x = h.coarse.vertices();
    let dist = |v: usize| x[v][0].hypot(x[v][1]);
    *dofs
        .interior()
        .iter()
        .min_by(|&&a, &&b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
        .expect("coarse mesh has interior vertices")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub level: usize,
    pub space: Space,
    pub dt: f64,
    pub n_steps: usize,
    pub relative_drift: f64,
}

/// Free oscillations over at least `energy_steps` steps at 0.9 times each
/// space's own CFL step, recording the discrete energy.
pub fn cmd_energy(config: &StudyConfig) -> Result<Vec<EnergyRow>> {
    config.validate()?;
    let hash = config.hash();
    let mut rows = Vec::new();
    for level in config.levels() {
        let h = lshape_hierarchy(level)?;
        let with_reduced = config.spaces.iter().any(|s| s.is_reduced());
        let disc = Discretization::new(&h, config.m_policy.localization(&h), with_reduced)?;
        for &space in &config.spaces {
            let ops = disc.operators(&h, space)?;
            let lambda = max_eigenvalue_seeded(&ops.a, &ops.mass.to_matrix(), config.seed)?;
            let dt = 0.9 * config.safety * 2f64.sqrt() / lambda.sqrt();
            let problem =
                free_oscillation_problem(h.clone(), (config.energy_steps as f64 + 0.5) * dt);
            let run = run_wave(&problem, &ops, DtPolicy::Explicit(dt), config.run_options())?;
            let mut csv = String::from("step,time,energy\n");
            for (n, e) in run.energies.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{n},{},{}",
                    fmt_f64((n as f64 + 0.5) * dt),
                    fmt_f64(*e)
                );
            }
            write_atomic(&config.path(&format!("energy_l{level}_{space}.csv")), &csv)?;
            rows.push(EnergyRow {
                level,
                space,
                dt,
                n_steps: run.n_steps,
                relative_drift: relative_energy_drift(&run.energies),
            });
        }
    }
    let mut csv = String::from("level,space,dt,n_steps,relative_drift,config_hash\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{hash}",
            r.level,
            r.space,
            fmt_f64(r.dt),
            r.n_steps,
            fmt_f64(r.relative_drift)
        );
    }
    write_atomic(&config.path("energy_summary.csv"), &csv)?;
    Ok(rows)
}

/// Writes the coarse and graded fine L-shape meshes of every level in the
/// text mesh format, plus a table of mesh statistics.
pub fn cmd_mesh(config: &StudyConfig) -> Result<Vec<(usize, MeshStats, MeshStats)>> {
    config.validate()?;
    let mut out = Vec::new();
    let mut csv = String::from(
        "level,mesh,n_vertices,n_interior_vertices,n_triangles,h_max,h_min,min_angle\n",
    );
    for level in config.levels() {
        let h = lshape_hierarchy(level)?;
        for (name, mesh) in [("coarse", &h.coarse), ("fine", &h.fine)] {
            let mut buf = Vec::new();
            mesh.write_text(&mut buf)?;
            let text = String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))?;
            write_atomic(&config.path(&format!("mesh_l{level}_{name}.txt")), &text)?;
            let s = mesh.stats();
            let _ = writeln!(
                csv,
                "{level},{name},{},{},{},{},{},{}",
                s.n_vertices,
                s.n_interior_vertices,
                s.n_triangles,
                fmt_f64(s.h_max),
                fmt_f64(s.h_min),
                fmt_f64(s.min_angle)
            );
        }
        out.push((level, h.coarse.stats(), h.fine.stats()));
    }
    write_atomic(&config.path("mesh_stats.csv"), &csv)?;
    Ok(out)
}
