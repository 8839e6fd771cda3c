use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};
use neumann_core::axisym::{AxisymOptConfig, REFERENCE_ELEMENTS};
use neumann_core::density::{default_continuation, ClusterGap, DensityOptConfig};
use neumann_core::levelset::LevelSetConfig;
use neumann_core::mesh::{make_icosphere, make_torus};
use neumann_core::{SurfaceMesh, Vec3};

use crate::medit::read_medit_mesh;
use crate::CliError;

#[derive(Debug, Clone, Parser)]
#[command(
    name = "neumann",
    version,
    about = "Maximize Neumann eigenvalues of the Laplace-Beltrami operator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a surface mesh and export it in MEDIT format.
    Mesh(MeshArgs),
    /// Tabulate the cap and union-of-k-caps values of μ_k over a mass sweep.
    Reference(ReferenceArgs),
    /// Maximize μ_k over densities on a surface mesh.
    OptimizeDensity(DensityArgs),
    /// Maximize μ_1 over axisymmetric densities on the sphere.
    #[command(name = "optimize-density-1d")]
    OptimizeDensity1d(Density1dArgs),
    /// Dispersion of optimal 1D densities under refinement.
    DiagnoseDispersion(DispersionArgs),
    /// Maximize μ_k over domains with the level-set method.
    OptimizeLevelset(LevelSetArgs),
}

/// `sphere:<subdivisions>`, `torus:<R>,<r>,<nu>,<nv>`, or the path of a
/// MEDIT `.mesh` file.
#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSpec {
    Sphere(usize),
    Torus {
        major: f64,
        minor: f64,
        nu: usize,
        nv: usize,
    },
    File(PathBuf),
}

impl FromStr for SurfaceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(level) = s.strip_prefix("sphere:") {
            return level
                .parse()
                .map(SurfaceSpec::Sphere)
                .map_err(|_| format!("bad subdivision level `{level}`"));
        }
        if let Some(rest) = s.strip_prefix("torus:") {
            let parts: Vec<&str> = rest.split(',').collect();
            let bad = || format!("expected torus:R,r,nu,nv, found `{s}`");
            let [major, minor, nu, nv] = parts[..] else {
                return Err(bad());
            };
            return Ok(SurfaceSpec::Torus {
                major: major.parse().map_err(|_| bad())?,
                minor: minor.parse().map_err(|_| bad())?,
                nu: nu.parse().map_err(|_| bad())?,
                nv: nv.parse().map_err(|_| bad())?,
            });
        }
        let path = s.strip_prefix("file:").unwrap_or(s);
        if path.ends_with(".mesh") {
            return Ok(SurfaceSpec::File(path.into()));
        }
        Err(format!(
            "unknown surface `{s}`; use sphere:L, torus:R,r,nu,nv or a .mesh file"
        ))
    }
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<SurfaceMesh, CliError> {
        let usage = |e: neumann_core::Error| CliError::Usage(format!("surface: {e}"));
        match self {
            SurfaceSpec::Sphere(level) => make_icosphere(*level).map_err(usage),
            SurfaceSpec::Torus { major, minor, nu, nv } => make_torus(*major, *minor, *nu, *nv).map_err(usage),
            SurfaceSpec::File(path) => {
                read_medit_mesh(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
        }
    }
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("expected x,y,z, found `{s}`"))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected p,q, found `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// key = value file of defaults; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MeshArgs {
    #[arg(long, default_value = "sphere:4")]
    pub surface: SurfaceSpec,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ReferenceArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, required = true, value_delimiter = ',', action = ArgAction::Set)]
    pub masses: Vec<f64>,
    /// Elements of the 1D discretization.
    #[arg(long, default_value_t = REFERENCE_ELEMENTS)]
    pub elements: usize,
    /// Run the masses of the sweep on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Settings of the projected ascent shared by the surface and 1D optimizers.
#[derive(Debug, Clone, Args)]
pub struct AscentArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Exponent of the smoothed minimum over the eigenvalue cluster.
    #[arg(long, default_value_t = 20.0)]
    pub p: f64,
    /// Relative gap below which eigenvalues join the cluster of μ_k.
    #[arg(long, default_value_t = 0.05)]
    pub cluster_gap: f64,
    /// Decreasing ε values run before `epsilon` [default: 0.1 down to epsilon by √10].
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub continuation: Option<Vec<f64>>,
    /// Optimize at `epsilon` only.
    #[arg(long, conflicts_with = "continuation")]
    pub no_continuation: bool,
    /// Iteration budget of each continuation stage.
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    /// Skip the rounding polish after the last stage.
    #[arg(long)]
    pub no_polish: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl AscentArgs {
    pub fn continuation(&self) -> Vec<f64> {
        match (&self.continuation, self.no_continuation) {
            (_, true) => Vec::new(),
            (Some(list), false) => list.clone(),
            (None, false) => default_continuation(self.epsilon),
        }
    }

    pub fn density_config(&self, k: usize, mass: f64) -> DensityOptConfig {
        let mut config = DensityOptConfig::new(k, mass);
        config.epsilon = self.epsilon;
        config.p = self.p;
        config.cluster_gap = ClusterGap::Relative(self.cluster_gap);
        config.continuation = self.continuation();
        config.max_iters = self.max_iters;
        config.polish = !self.no_polish;
        config.restarts = self.restarts;
        config.seed = self.seed;
        config
    }

    pub fn axisym_config(&self) -> AxisymOptConfig {
        AxisymOptConfig {
            epsilon: self.epsilon,
            p: self.p,
            cluster_gap: ClusterGap::Relative(self.cluster_gap),
            continuation: self.continuation(),
            max_iters: self.max_iters,
            polish: !self.no_polish,
            restarts: self.restarts,
            seed: self.seed,
            ..AxisymOptConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub mass: f64,
    #[arg(long, default_value = "sphere:4")]
    pub surface: SurfaceSpec,
    /// Optimize first on this icosphere level and start from the result.
    #[arg(long)]
    pub coarse: Option<usize>,
    /// Force ρ = 0 on a geodesic cap.
    #[arg(long)]
    pub exclude_ball: bool,
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    pub ball_center: Vec3,
    /// Area of the excluded cap [default: the target mass].
    #[arg(long)]
    pub ball_area: Option<f64>,
    #[command(flatten)]
    pub ascent: AscentArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Density1dArgs {
    #[arg(long)]
    pub mass: f64,
    #[arg(long, default_value_t = 800)]
    pub elements: usize,
    #[command(flatten)]
    pub ascent: AscentArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct DispersionArgs {
    #[arg(long, default_value = "2,5", value_delimiter = ',', action = ArgAction::Set)]
    pub masses: Vec<f64>,
    /// Strictly ascending element counts; the first one normalizes the ratio.
    #[arg(long, default_value = "100,200,400,800", value_delimiter = ',', action = ArgAction::Set)]
    pub elements: Vec<usize>,
    /// Run the masses of the sweep on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub ascent: AscentArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct LevelSetArgs {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Target area of the penalty term.
    #[arg(long)]
    pub target_area: f64,
    #[arg(long, default_value = "sphere:4")]
    pub surface: SurfaceSpec,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Smoothing width of the indicator.
    #[arg(long, default_value_t = 1e-5)]
    pub sigma: f64,
    /// Step scale of the fixed-budget phase.
    #[arg(long, default_value_t = 3e-2)]
    pub gamma: f64,
    /// Weight of the area penalty.
    #[arg(long, default_value_t = 5.0)]
    pub b: f64,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 200)]
    pub adaptive_steps: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub min_step: f64,
    /// Highest frequencies of the random initial level set.
    #[arg(long, default_value = "3,3", value_parser = parse_pair)]
    pub trig_degrees: (usize, usize),
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    /// Screening length of the velocity smoother; 0 disables it.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 20)]
    pub redistance_period: usize,
    #[arg(long, default_value_t = 20.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.05)]
    pub cluster_gap: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

impl LevelSetArgs {
    pub fn config(&self) -> LevelSetConfig {
        let mut config = LevelSetConfig::new(self.k, self.target_area);
        config.epsilon = self.epsilon;
        config.sigma_s = self.sigma;
        config.gamma = self.gamma;
        config.b = self.b;
        config.n_steps = self.steps;
        config.adaptive_steps = self.adaptive_steps;
        config.min_step = self.min_step;
        config.trig_degrees = self.trig_degrees;
        config.restarts = self.restarts;
        config.alpha = self.alpha;
        config.redistance_period = self.redistance_period;
        config.p = self.p;
        config.cluster_gap = ClusterGap::Relative(self.cluster_gap);
        config.seed = self.seed;
        config
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Mesh(a) => &a.common,
            Command::Reference(a) => &a.common,
            Command::OptimizeDensity(a) => &a.common,
            Command::OptimizeDensity1d(a) => &a.common,
            Command::DiagnoseDispersion(a) => &a.common,
            Command::OptimizeLevelset(a) => &a.common,
        }
    }
}
