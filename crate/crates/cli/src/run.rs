use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches};
use neumann_core::axisym::{cap_reference_mu1, dispersion, optimize_density_1d_detailed, ratios, union_of_k_balls};
use neumann_core::density::optimize_density_detailed;
use neumann_core::levelset::{domain_area, optimize_levelset_detailed, smoothed_indicator};
use neumann_core::mesh::{geodesic_cap_field, make_icosphere};
use neumann_core::trace::OptTrace;
use neumann_core::{Surface, SurfaceMesh};

use crate::cli::{Cli, Command, Density1dArgs, DensityArgs, DispersionArgs, LevelSetArgs, MeshArgs, ReferenceArgs};
use crate::config::config_tokens;
use crate::medit::{write_medit_mesh, write_medit_sol};
use crate::report::{audit, float, mu_bound, write_table, write_trace, Summary};
use crate::CliError;

/// Parses the command line, merging the `--config` file of the subcommand
/// when one is given.
pub fn parse_args<I, T>(args: I) -> Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in &names {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let config = config_path(&args).and_then(|(name, path)| Some((cmd.find_subcommand(&name)?, path)));
    let merged = match config {
        Some((sub_cmd, path)) => {
            let tokens = config_tokens(sub_cmd, Path::new(&path))?;
            let mut merged = args[..2].to_vec();
            merged.extend(tokens.into_iter().map(OsString::from));
            merged.extend_from_slice(&args[2..]);
            merged
        }
        None => args,
    };
    let matches = cmd.try_get_matches_from(merged)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

/// Subcommand name and the value of its `--config` option, if any. The
/// subcommand is always the first argument.
fn config_path(args: &[OsString]) -> Option<(String, OsString)> {
    let name = args.get(1)?.to_str()?.to_string();
    let rest = &args[2..];
    let path = rest.iter().enumerate().find_map(|(i, a)| match a.to_str()? {
        "--config" => rest.get(i + 1).cloned(),
        a => a.strip_prefix("--config=").map(OsString::from),
    })?;
    Some((name, path))
}

/// Executes a parsed command; summary lines go to `out`.
pub fn run(command: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Mesh(args) => mesh(args, out),
        Command::Reference(args) => reference(args, out),
        Command::OptimizeDensity(args) => optimize_density(args, out),
        Command::OptimizeDensity1d(args) => optimize_density_1d(args, out),
        Command::DiagnoseDispersion(args) => diagnose_dispersion(args, out),
        Command::OptimizeLevelset(args) => optimize_levelset(args, out),
    }
}

/// Files of one run. Everything is written under a `.partial` name and
/// renamed once the run succeeds, so a failed run leaves only `.partial`
/// files behind.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn partial(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.partial"))
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let file = File::create(self.partial(name))?;
        self.names.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn mesh(&mut self, name: &str, mesh: &SurfaceMesh) -> Result<(), CliError> {
        write_medit_mesh(mesh, self.partial(name))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn sol(&mut self, name: &str, mesh: &SurfaceMesh, values: &[f64]) -> Result<(), CliError> {
        write_medit_sol(mesh, values, self.partial(name))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn trace(&mut self, name: &str, trace: &OptTrace) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        write_trace(&mut w, trace)?;
        w.flush()?;
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        write_table(&mut w, header, rows)?;
        w.flush()?;
        Ok(())
    }

    fn summary(&mut self, summary: &Summary) -> Result<(), CliError> {
        let mut w = self.create("summary.csv")?;
        summary.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn commit(self) -> Result<(), CliError> {
        for name in &self.names {
            fs::rename(self.partial(name), self.dir.join(name))?;
        }
        Ok(())
    }
}

fn usage(e: neumann_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn mesh(args: &MeshArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mesh = args.surface.build()?;
    let mut files = Outputs::new(&args.common.out)?;
    files.mesh("mesh.mesh", &mesh)?;
    files.commit()?;
    writeln!(
        out,
        "vertices={} triangles={} area={}",
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.total_area()
    )?;
    Ok(())
}

/// Runs `job` for every entry of a sweep, on one thread per entry when
/// `parallel` is set. Results keep the order of `items`.
fn sweep<T: Sync, R: Send>(
    items: &[T],
    parallel: bool,
    job: impl Fn(usize, &T) -> Result<R, CliError> + Sync,
) -> Result<Vec<R>, CliError> {
    if !parallel {
        return items.iter().enumerate().map(|(i, t)| job(i, t)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let job = &job;
                scope.spawn(move || job(i, t))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

fn check_masses(masses: &[f64]) -> Result<(), CliError> {
    match masses.iter().find(|&&m| !(m > 0.0 && m < 4.0 * std::f64::consts::PI)) {
        Some(m) => Err(CliError::Usage(format!("mass {m} must lie in (0, 4π)"))),
        None => Ok(()),
    }
}

fn reference(args: &ReferenceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_masses(&args.masses)?;
    if args.k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    if args.elements < 4 {
        return Err(CliError::Usage("at least 4 elements are needed".into()));
    }
    let mut files = Outputs::new(&args.common.out)?;
    let rows = sweep(&args.masses, args.parallel, |_, &m| {
        let cap = cap_reference_mu1(m, args.elements)?;
        let balls = union_of_k_balls(m, args.k, args.elements)?;
        Ok(vec![
            float(m),
            float(cap),
            float(balls),
            float(mu_bound(args.k, m)),
            audit(args.k, m, balls).to_string(),
        ])
    })?;
    files.table(
        "reference.csv",
        &["m", "mu_cap", "mu_kballs", "bound", "strichartz"],
        &rows,
    )?;
    files.commit()?;
    for row in &rows {
        writeln!(out, "m={} mu_cap={} mu_kballs={}", row[0], row[1], row[2])?;
    }
    Ok(())
}

/// Value of the nearest vertex of `from` at every vertex of `to`.
pub fn nearest_vertex_transfer(from: &SurfaceMesh, values: &[f64], to: &SurfaceMesh) -> Vec<f64> {
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    to.vertices()
        .iter()
        .map(|p| {
            let (best, _) = from
                .vertices()
                .iter()
                .enumerate()
                .map(|(i, q)| (i, dist2(p, q)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("source mesh has vertices");
            values[best]
        })
        .collect()
}

fn exclusion_mask(mesh: &SurfaceMesh, args: &DensityArgs) -> Result<Option<Vec<bool>>, CliError> {
    if !args.exclude_ball {
        return Ok(None);
    }
    let area = args.ball_area.unwrap_or(args.mass);
    let cap = geodesic_cap_field(mesh, args.ball_center, area).map_err(usage)?;
    Ok(Some(cap.values().iter().map(|&v| v > 0.5).collect()))
}

fn optimize_density(args: &DensityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mesh = args.surface.build()?;
    let mut config = args.ascent.density_config(args.k, args.mass);
    config.exclusion_mask = exclusion_mask(&mesh, args)?;
    config.validate(mesh.n_vertices(), mesh.total_area()).map_err(usage)?;
    let coarse = match args.coarse {
        Some(level) => {
            if mesh.surface() != Surface::Sphere {
                return Err(CliError::Usage("--coarse needs a sphere surface".into()));
            }
            let coarse = make_icosphere(level).map_err(usage)?;
            let mut coarse_config = config.clone();
            coarse_config.exclusion_mask = exclusion_mask(&coarse, args)?;
            coarse_config
                .validate(coarse.n_vertices(), coarse.total_area())
                .map_err(usage)?;
            Some((coarse, coarse_config))
        }
        None => None,
    };

    let mut files = Outputs::new(&args.common.out)?;
    files.mesh("mesh.mesh", &mesh)?;
    if let Some((coarse, coarse_config)) = coarse {
        let (rho, trace, _) = optimize_density_detailed(&coarse, &coarse_config)?;
        files.trace("trace_coarse.csv", &trace)?;
        config.initial_density = Some(nearest_vertex_transfer(&coarse, rho.values(), &mesh));
        config.restarts = 1;
        config.continuation.clear();
    }
    let (rho, trace, eigs) = optimize_density_detailed(&mesh, &config)?;
    files.sol("density.sol", &mesh, rho.values())?;
    files.trace("trace.csv", &trace)?;
    let summary = Summary {
        k: args.k,
        mass: args.mass,
        mu_k: eigs[args.k],
    };
    files.summary(&summary)?;
    files.commit()?;
    writeln!(out, "{}", summary.line())?;
    Ok(())
}

fn optimize_density_1d(args: &Density1dArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = args.ascent.axisym_config();
    config.validate(args.mass, args.elements).map_err(usage)?;
    let mut files = Outputs::new(&args.common.out)?;
    let (rho, trace, eigs) = optimize_density_1d_detailed(args.mass, args.elements, &config)?;
    let n = rho.elements() as f64;
    let rows: Vec<Vec<String>> = rho
        .values()
        .iter()
        .enumerate()
        .map(|(i, &r)| vec![float(std::f64::consts::PI * i as f64 / n), float(r)])
        .collect();
    files.table("density_1d.csv", &["theta", "rho"], &rows)?;
    files.trace("trace.csv", &trace)?;
    let summary = Summary {
        k: 1,
        mass: args.mass,
        mu_k: eigs[1],
    };
    files.summary(&summary)?;
    files.commit()?;
    writeln!(out, "{}", summary.line())?;
    Ok(())
}

fn diagnose_dispersion(args: &DispersionArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_masses(&args.masses)?;
    if args.elements.is_empty() || args.elements.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage(
            "element counts must be nonempty and strictly ascending".into(),
        ));
    }
    for &m in &args.masses {
        args.ascent
            .axisym_config()
            .validate(m, args.elements[0])
            .map_err(usage)?;
    }
    let mut files = Outputs::new(&args.common.out)?;
    let per_mass = sweep(&args.masses, args.parallel, |i, &m| {
        let mut config = args.ascent.axisym_config();
        config.seed = args.ascent.seed.wrapping_add(i as u64);
        let runs: Vec<(f64, f64)> = args
            .elements
            .iter()
            .map(|&n| optimize_density_1d_detailed(m, n, &config).map(|(rho, _, eigs)| (dispersion(&rho), eigs[1])))
            .collect::<Result<_, _>>()?;
        let h: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let ratio = ratios(&h)?;
        Ok(args
            .elements
            .iter()
            .zip(runs.iter().zip(ratio))
            .map(|(&n, (&(h, mu), r))| {
                vec![
                    float(m),
                    n.to_string(),
                    float(h),
                    float(r),
                    float(mu),
                    float(mu_bound(1, m)),
                    audit(1, m, mu).to_string(),
                ]
            })
            .collect::<Vec<_>>())
    })?;
    let rows: Vec<Vec<String>> = per_mass.into_iter().flatten().collect();
    files.table(
        "dispersion.csv",
        &["m", "elements", "h", "dispersion", "mu_1", "bound", "strichartz"],
        &rows,
    )?;
    files.commit()?;
    for row in &rows {
        writeln!(out, "m={} N={} dispersion={}", row[0], row[1], row[3])?;
    }
    Ok(())
}

fn optimize_levelset(args: &LevelSetArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mesh = args.surface.build()?;
    let config = args.config();
    config.validate(&mesh).map_err(usage)?;
    let mut files = Outputs::new(&args.common.out)?;
    files.mesh("mesh.mesh", &mesh)?;
    let outcome = optimize_levelset_detailed(&mesh, &config)?;
    if let Some(failure) = &outcome.trace.failure {
        eprintln!(
            "warning: restart {} stopped at iteration {}: {}",
            failure.restart, failure.iteration, failure.message
        );
    }
    files.sol("phi.sol", &mesh, &outcome.field.phi)?;
    files.sol("indicator.sol", &mesh, smoothed_indicator(&outcome.field).values())?;
    files.trace("trace.csv", &outcome.trace)?;
    let summary = Summary {
        k: args.k,
        mass: outcome.area,
        mu_k: outcome.mu_k(args.k),
    };
    files.summary(&summary)?;
    files.commit()?;
    writeln!(
        out,
        "{} domain_area={}",
        summary.line(),
        domain_area(&mesh, &outcome.field.phi)
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfinished_outputs_stay_partial() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = make_icosphere(0).unwrap();
        let mut files = Outputs::new(dir.path()).unwrap();
        files.mesh("mesh.mesh", &mesh).unwrap();
        files.table("t.csv", &["a"], &[vec!["1".into()]]).unwrap();
        drop(files);
        assert!(dir.path().join("mesh.mesh.partial").exists());
        assert!(dir.path().join("t.csv.partial").exists());
        assert!(!dir.path().join("mesh.mesh").exists());

        let mut files = Outputs::new(dir.path()).unwrap();
        files.table("t.csv", &["a"], &[vec!["2".into()]]).unwrap();
        files.commit().unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), "a\n2\n");
        assert!(!dir.path().join("t.csv.partial").exists());
    }

    #[test]
    fn transfer_between_nested_icospheres_copies_shared_vertices() {
        let coarse = make_icosphere(1).unwrap();
        let fine = make_icosphere(2).unwrap();
        let values: Vec<f64> = (0..coarse.n_vertices()).map(|i| i as f64).collect();
        let moved = nearest_vertex_transfer(&coarse, &values, &fine);
        assert_eq!(moved.len(), fine.n_vertices());
        assert_eq!(&moved[..coarse.n_vertices()], &values[..]);
    }
}
