//! Scenario configs and report bundles behind the `csde` binary.
//!
//! A config is a TOML document describing one experiment. Running it writes
//! a bundle of CSV and JSON files into an output directory; see the README
//! for the column schemas.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::{optimize_alpha, AlphaTarget, BoundParams, Envelope, EnvelopeKind, Profile};
use crate::contraction::{certify_system, Certificate};
use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{CascadeInput, CouplingMode};
use crate::metric::Metric;
use crate::montecarlo::{
    check_envelope, check_limsup, pair_error_moment, tracking_error_moment, AlphaPolicy, Ensemble, InitialLaw,
    MomentSeries, PairScenario, TrackingInput, TrackingScenario, TrackingTarget, Verdict, TAIL_FRACTION,
};
use crate::noise::{feller_check, JDParams, OUParams};
use crate::rng::RngLineage;
use crate::signal::{InputBox, InputNorm, InputSignal};
use crate::system::SystemSpec;
use crate::wasserstein::{
    gibbs_check, gibbs_check_2d, long_run_samples, verify_wasserstein_contraction, EmpiricalMeasure, GibbsReport,
    Grid1d, SampleNorm, WassersteinScenario,
};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CSDE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "csde-out";
pub const DEFAULT_PATHS: usize = 10_000;
/// `α` used for the fixed-α columns when the policy is `opt`.
pub const DEFAULT_FIXED_ALPHA: f64 = 0.5;
/// Upper bound on recorded time points when `record_every` is not given.
const MAX_RECORDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NissPair,
    NissVsOde,
    TrackDidc,
    TrackOuSidc,
    TrackOuSisc,
    TrackJdSidc,
    TrackJdSisc,
    Wasserstein,
    Gibbs,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::NissPair => "niss_pair",
            ScenarioKind::NissVsOde => "niss_vs_ode",
            ScenarioKind::TrackDidc => "track_didc",
            ScenarioKind::TrackOuSidc => "track_ou_sidc",
            ScenarioKind::TrackOuSisc => "track_ou_sisc",
            ScenarioKind::TrackJdSidc => "track_jd_sidc",
            ScenarioKind::TrackJdSisc => "track_jd_sisc",
            ScenarioKind::Wasserstein => "wasserstein",
            ScenarioKind::Gibbs => "gibbs",
        }
    }

    pub fn envelope(&self) -> Option<EnvelopeKind> {
        Some(match self {
            ScenarioKind::NissPair => EnvelopeKind::NissTwoTraj,
            ScenarioKind::NissVsOde => EnvelopeKind::NissVsOde,
            ScenarioKind::TrackDidc => EnvelopeKind::TrackDidc,
            ScenarioKind::TrackOuSidc => EnvelopeKind::TrackOuSidc,
            ScenarioKind::TrackOuSisc => EnvelopeKind::TrackOuSisc,
            ScenarioKind::TrackJdSidc => EnvelopeKind::TrackJdSidc,
            ScenarioKind::TrackJdSisc => EnvelopeKind::TrackJdSisc,
            ScenarioKind::Wasserstein | ScenarioKind::Gibbs => return None,
        })
    }

    fn is_tracking(&self) -> bool {
        matches!(
            self,
            ScenarioKind::TrackDidc
                | ScenarioKind::TrackOuSidc
                | ScenarioKind::TrackOuSisc
                | ScenarioKind::TrackJdSidc
                | ScenarioKind::TrackJdSisc
        )
    }

    fn is_ou(&self) -> bool {
        matches!(self, ScenarioKind::TrackOuSidc | ScenarioKind::TrackOuSisc)
    }

    fn is_jd(&self) -> bool {
        matches!(self, ScenarioKind::TrackJdSidc | ScenarioKind::TrackJdSisc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKeyword {
    Opt,
}

/// `alpha_policy = "opt"` or a number in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Fixed(f64),
    Named(AlphaKeyword),
}

impl Default for AlphaSetting {
    fn default() -> Self {
        AlphaSetting::Named(AlphaKeyword::Opt)
    }
}

impl std::str::FromStr for AlphaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("opt") {
            return Ok(AlphaSetting::Named(AlphaKeyword::Opt));
        }
        let a: f64 = s
            .parse()
            .map_err(|_| Error::Parse(format!("alpha must be `opt` or a number in (0, 1), got `{s}`")))?;
        Ok(AlphaSetting::Fixed(a))
    }
}

impl AlphaSetting {
    fn policy(&self) -> AlphaPolicy {
        match self {
            AlphaSetting::Fixed(a) => AlphaPolicy::Fixed(*a),
            AlphaSetting::Named(AlphaKeyword::Opt) => AlphaPolicy::Optimized,
        }
    }
}

/// Registered system families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    /// `F = −c(x − u)` with isotropic dispersion of total intensity `σ²`.
    LinearTracker {
        #[serde(default = "one")]
        dim: usize,
        c: f64,
        sigma: f64,
    },
    /// `F = A·x + B·u` with constant dispersion and optional metric `P`.
    Affine {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        dispersion: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric: Option<Vec<Vec<f64>>>,
    },
    /// Langevin dynamics for `f(x) = c‖x‖²/2`.
    QuadraticPotential {
        #[serde(default = "one")]
        dim: usize,
        c: f64,
        sigma: f64,
    },
    /// Scalar Langevin dynamics for `f(x) = x⁴/4 + c·x²/2`.
    QuarticPotential { c: f64, sigma: f64 },
}

fn one() -> usize {
    1
}

impl SystemConfig {
    fn label(&self) -> &'static str {
        match self {
            SystemConfig::LinearTracker { .. } => "linear_tracker",
            SystemConfig::Affine { .. } => "affine",
            SystemConfig::QuadraticPotential { .. } => "quadratic_potential",
            SystemConfig::QuarticPotential { .. } => "quartic_potential",
        }
    }

    fn is_potential(&self) -> bool {
        matches!(self, SystemConfig::QuadraticPotential { .. } | SystemConfig::QuarticPotential { .. })
    }

    pub fn build(&self) -> Result<SystemSpec> {
        match self {
            SystemConfig::LinearTracker { dim, c, sigma } => SystemSpec::linear_tracker(*dim, *c, *sigma),
            SystemConfig::Affine {
                a,
                b,
                dispersion,
                metric,
            } => {
                let a = matrix("system.a", a)?;
                let n = a.nrows();
                let metric = match metric {
                    Some(p) => Metric::new(matrix("system.metric", p)?)?,
                    None => Metric::identity(n),
                };
                SystemSpec::affine(a, matrix("system.b", b)?, matrix("system.dispersion", dispersion)?, metric)
            }
            SystemConfig::QuadraticPotential { dim, c, sigma } => {
                let c = *c;
                SystemSpec::gradient_flow(
                    *dim,
                    move |x, out| x.iter().zip(out.iter_mut()).for_each(|(xi, o)| *o = c * xi),
                    *sigma,
                    c,
                )
            }
            SystemConfig::QuarticPotential { c, sigma } => {
                let c = *c;
                SystemSpec::gradient_flow(1, move |x, out| out[0] = x[0].powi(3) + c * x[0], *sigma, c)
            }
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("`{name}` must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Deterministic signal specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalConfig {
    Constant {
        value: Vec<f64>,
    },
    /// Scalar `offset + amplitude·sin(omega·t)`.
    Sine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        omega: f64,
    },
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl SignalConfig {
    pub fn build(&self) -> Result<InputSignal> {
        match self {
            SignalConfig::Constant { value } => Ok(InputSignal::constant(value.clone())),
            SignalConfig::Sine {
                offset,
                amplitude,
                omega,
            } => Ok(InputSignal::scalar_sine(*offset, *amplitude, *omega)),
            SignalConfig::PiecewiseLinear { knots, values } => {
                InputSignal::piecewise_linear(knots.clone(), values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ux: Option<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uy: Option<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<SignalConfig>,
}

impl InputConfig {
    fn is_empty(&self) -> bool {
        *self == InputConfig::default()
    }
}

/// Input-noise parameters. OU kinds use `sigma_xi`/`xi0`; JD kinds use
/// `sigma_u`/`a`/`u0`/`allow_unsafe`. Both revert at the system rate `c`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_unsafe: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Per-coordinate standard deviation of both initial clouds around `x0`.
    #[serde(default = "default_cloud_std")]
    pub cloud_std: f64,
    /// Offset of the y-cloud centre from the x-cloud centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
    #[serde(default = "default_order")]
    pub p: f64,
}

fn default_samples() -> usize {
    1024
}

fn default_cloud_std() -> f64 {
    0.5
}

fn default_order() -> f64 {
    2.0
}

impl Default for WassersteinConfig {
    fn default() -> Self {
        WassersteinConfig {
            samples: default_samples(),
            cloud_std: default_cloud_std(),
            shift: None,
            p: default_order(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsConfig {
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_burn_in() -> f64 {
    10.0
}

fn default_spacing() -> f64 {
    2.0
}

fn default_lo() -> f64 {
    -5.0
}

fn default_hi() -> f64 {
    5.0
}

fn default_points() -> usize {
    1001
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: default_burn_in(),
            spacing: default_spacing(),
            lo: default_lo(),
            hi: default_hi(),
            points: default_points(),
        }
    }
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_kind: ScenarioKind,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub alpha_policy: AlphaSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "InputConfig::is_empty")]
    pub input: InputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wasserstein: Option<WassersteinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsConfig>,
}

/// Parses and validates a TOML scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| e.context(path.display().to_string()))
}

fn mismatch(field: &str, kind: ScenarioKind) -> Error {
    Error::Parse(format!("field `{field}` does not apply to scenario kind `{}`", kind.name()))
}

fn missing(field: &str, kind: ScenarioKind) -> Error {
    Error::Parse(format!("scenario kind `{}` requires field `{field}`", kind.name()))
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Kind-specific presence rules.
    pub fn validate(&self) -> Result<()> {
        let k = self.scenario_kind;
        let inp = &self.input;
        let forbid = |present: bool, field: &str| if present { Err(mismatch(field, k)) } else { Ok(()) };
        let need = |present: bool, field: &str| if present { Ok(()) } else { Err(missing(field, k)) };

        let pairwise = matches!(k, ScenarioKind::NissPair | ScenarioKind::NissVsOde | ScenarioKind::Wasserstein);
        forbid(!pairwise && inp.ux.is_some(), "input.ux")?;
        forbid(!pairwise && inp.uy.is_some(), "input.uy")?;
        forbid(!matches!(k, ScenarioKind::NissPair | ScenarioKind::NissVsOde) && inp.y0.is_some(), "input.y0")?;
        forbid(k != ScenarioKind::NissPair && inp.coupling.is_some(), "input.coupling")?;
        forbid(!k.is_tracking() && inp.theta.is_some(), "input.theta")?;
        if pairwise {
            need(inp.ux.is_some(), "input.ux")?;
        }
        if k.is_tracking() {
            need(inp.theta.is_some(), "input.theta")?;
        }

        let noise = self.noise.clone().unwrap_or_default();
        forbid(!k.is_tracking() && self.noise.is_some(), "noise")?;
        forbid(!k.is_ou() && noise.sigma_xi.is_some(), "noise.sigma_xi")?;
        forbid(!k.is_ou() && noise.xi0.is_some(), "noise.xi0")?;
        for (present, field) in [
            (noise.sigma_u.is_some(), "noise.sigma_u"),
            (noise.a.is_some(), "noise.a"),
            (noise.u0.is_some(), "noise.u0"),
            (noise.allow_unsafe.is_some(), "noise.allow_unsafe"),
        ] {
            forbid(!k.is_jd() && present, field)?;
        }
        if k.is_ou() {
            need(noise.sigma_xi.is_some(), "noise.sigma_xi")?;
        }
        if k.is_jd() {
            need(noise.sigma_u.is_some(), "noise.sigma_u")?;
            need(noise.a.is_some(), "noise.a")?;
        }

        forbid(k != ScenarioKind::Wasserstein && self.wasserstein.is_some(), "wasserstein")?;
        forbid(k != ScenarioKind::Gibbs && self.gibbs.is_some(), "gibbs")?;
        if (k == ScenarioKind::Gibbs) != self.system.is_potential() {
            return Err(Error::Parse(format!(
                "system `{}` cannot be used with scenario kind `{}` (gibbs needs a potential system, other kinds an affine one)",
                self.system.label(),
                k.name()
            )));
        }

        if !(self.grid.horizon > 0.0) {
            return Err(Error::Parse(format!("grid.horizon must be positive, got {}", self.grid.horizon)));
        }
        if self.grid.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(Error::Parse("grid.dt must be positive".into()));
        }
        if let AlphaSetting::Fixed(a) = self.alpha_policy {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Parse(format!("alpha_policy must be `opt` or lie in (0, 1), got {a}")));
            }
        }
        if self.n_paths < 2 {
            return Err(Error::Parse("n_paths must be at least 2".into()));
        }
        Ok(())
    }

    /// The simulation grid and record stride.
    pub fn time_grid(&self, c: f64) -> Result<(TimeGrid, usize)> {
        let grid = TimeGrid::over(self.grid.horizon, self.grid.dt.unwrap_or_else(|| TimeGrid::default_dt(c)))?;
        let every = match self.grid.record_every {
            Some(e) => e,
            None => {
                let lo = grid.steps.div_ceil(MAX_RECORDS).max(1);
                (lo..=grid.steps).find(|d| grid.steps % d == 0).unwrap_or(1)
            }
        };
        grid.coarsen(every)?;
        Ok((grid, every))
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<AlphaSetting>,
    pub dry_run: bool,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunOptions {
    fn apply(&self, cfg: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut c = cfg.clone();
        if let Some(n) = self.paths {
            c.n_paths = n;
        }
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        if let Some(a) = self.alpha {
            c.alpha_policy = a;
        }
        c.validate()?;
        Ok(c)
    }

    /// `--out`, then the config's `output_dir`, then the environment
    /// variable, then `csde-out`.
    pub fn output_dir(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FellerSummary {
    pub holds: bool,
    pub margin: f64,
}

/// Contents of `certificate.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub system: String,
    pub certificate: Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feller: Option<FellerSummary>,
    /// Itô correction constant of the equilibrium map (zero for affine maps).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ito_correction: Option<f64>,
}

/// Contents of `verdict.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioVerdict {
    pub scenario_kind: ScenarioKind,
    pub holds: bool,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_fixed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_opt: Option<f64>,
    /// The check that decides `holds`.
    pub pointwise: Verdict,
    /// Informational tail-window comparison against the limsup.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gibbs: Option<GibbsReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// `None` for dry runs.
    pub verdict: Option<ScenarioVerdict>,
    pub config_echo: String,
}

impl RunOutcome {
    /// 0 when the verdict holds (or on a dry run), 2 when it fails.
    pub fn exit_code(&self) -> i32 {
        match &self.verdict {
            Some(v) if !v.holds => 2,
            _ => 0,
        }
    }
}

/// Tracks written files so a failed run can remove them.
struct Bundle {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
}

impl Bundle {
    fn open(dir: PathBuf) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Bundle {
            dir,
            created_dir,
            files: vec![],
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(&p, s).map_err(|source| Error::Io { path: p, source })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&p)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|source| Error::Io { path: p, source })
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Grid time with the `k·dt` rounding noise removed.
fn time(t: f64) -> String {
    format!("{t:.12e}").parse::<f64>().unwrap_or(t).to_string()
}

/// Runs one scenario and writes its bundle into the resolved output
/// directory. Partial outputs are removed when the run fails.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = opts.apply(cfg)?;
    let dir = opts.output_dir(&cfg);
    let mut bundle = Bundle::open(dir.clone())?;
    let mut run = || -> Result<Option<ScenarioVerdict>> {
        match opts.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?
                .install(|| execute(&cfg, opts.dry_run, &mut bundle)),
            None => execute(&cfg, opts.dry_run, &mut bundle),
        }
    };
    match run() {
        Ok(verdict) => Ok(RunOutcome {
            out_dir: dir,
            files: bundle.files.clone(),
            verdict,
            config_echo: cfg.to_toml()?,
        }),
        Err(e) => {
            bundle.discard();
            Err(e.context(format!("scenario `{}`", cfg.scenario_kind.name())))
        }
    }
}

/// Certificate of the configured system without simulating.
pub fn certify(cfg: &ScenarioConfig) -> Result<CertificateReport> {
    Ok(prepare(cfg)?.cert)
}

struct Prepared {
    sys: SystemSpec,
    cert: CertificateReport,
    grid: TimeGrid,
    every: usize,
    jd: Option<JDParams>,
}

fn prepare(cfg: &ScenarioConfig) -> Result<Prepared> {
    let sys = cfg.system.build()?;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let x_box = InputBox::cube(n, -3.0, 3.0)?;
    let u_box = InputBox::cube(m, -3.0, 3.0)?;
    let certificate = certify_system(&sys, &x_box, &u_box, 20_000, cfg.master_seed)?;
    if !(certificate.c_hat > 0.0) {
        return Err(Error::Certification(format!(
            "system is not contracting in the chosen metric (c = {})",
            certificate.c_hat
        )));
    }
    let (grid, every) = cfg.time_grid(certificate.c_hat)?;
    let mut cert = CertificateReport {
        system: cfg.system.label().into(),
        certificate,
        feller: None,
        ito_correction: None,
    };
    let mut jd = None;
    if cfg.scenario_kind.is_tracking() {
        // affine systems have affine equilibrium maps, whose Hessians vanish
        cert.ito_correction = Some(0.0);
    }
    if cfg.scenario_kind.is_jd() {
        let noise = cfg.noise.clone().unwrap_or_default();
        let theta = cfg.input.theta.as_ref().expect("validated").build()?;
        let a = noise.a.clone().expect("validated");
        let times: Vec<f64> = (0..=1000).map(|j| grid.end() * j as f64 / 1000.0).collect();
        let p = JDParams::new(
            cert.certificate.c_hat,
            theta,
            noise.sigma_u.expect("validated"),
            a,
            &times,
            noise.allow_unsafe.unwrap_or(false),
        )?;
        let f = feller_check(&p, &times)?;
        cert.feller = Some(FellerSummary {
            holds: f.holds,
            margin: f.margin,
        });
        jd = Some(p);
    }
    Ok(Prepared {
        sys,
        cert,
        grid,
        every,
        jd,
    })
}

fn execute(cfg: &ScenarioConfig, dry_run: bool, bundle: &mut Bundle) -> Result<Option<ScenarioVerdict>> {
    let prep = prepare(cfg)?;
    bundle.json("certificate.json", &prep.cert)?;
    if dry_run {
        return Ok(None);
    }
    let ens = Ensemble::new(cfg.n_paths, cfg.master_seed);
    match cfg.scenario_kind {
        ScenarioKind::Wasserstein => run_wasserstein(cfg, &prep, bundle).map(Some),
        ScenarioKind::Gibbs => run_gibbs(cfg, &prep, bundle).map(Some),
        _ => {
            let (series, env) = moment_run(cfg, &prep, &ens)?;
            finish_moments(cfg, &series, &env, bundle).map(Some)
        }
    }
}

fn point_or_zero(v: &Option<Vec<f64>>, dim: usize, field: &str) -> Result<Vec<f64>> {
    let v = v.clone().unwrap_or_else(|| vec![0.0; dim]);
    check_dim(field, v.len(), dim)?;
    Ok(v)
}

fn profile_limsup(p: &Profile, horizon: f64) -> Option<f64> {
    match p {
        Profile::Constant(_) => None,
        Profile::Function(_) => Some(p.tail_max(horizon, TAIL_FRACTION, 2000)),
    }
}

fn moment_run(cfg: &ScenarioConfig, prep: &Prepared, ens: &Ensemble) -> Result<(MomentSeries, Envelope)> {
    let k = cfg.scenario_kind;
    let sys = &prep.sys;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let metric = sys.metric();
    let cert = &prep.cert.certificate;
    let mut bp = BoundParams::new(cert.c_hat, cert.ell_hat, cert.sigma_x_sq_hat);
    let horizon = prep.grid.end();
    let x0 = point_or_zero(&cfg.input.x0, n, "input.x0")?;
    let series = match k {
        ScenarioKind::NissPair | ScenarioKind::NissVsOde => {
            let y0 = point_or_zero(&cfg.input.y0, n, "input.y0")?;
            let ux = cfg.input.ux.as_ref().expect("validated").build()?;
            let uy = match &cfg.input.uy {
                Some(s) => s.build()?,
                None => InputSignal::zero(m),
            };
            bp.e0 = metric.dist_sq_unchecked(&x0, &y0);
            bp.input_gap_sq = Profile::input_gap(&ux, &uy, InputNorm::L2, 2)?;
            bp.input_gap_sq_limsup = profile_limsup(&bp.input_gap_sq, horizon);
            let sc = PairScenario {
                sys_x: sys.clone(),
                sys_y: sys.clone(),
                x0: InitialLaw::Point(x0),
                y0: InitialLaw::Point(y0),
                u_x: ux,
                u_y: uy,
                mode: cfg.input.coupling.unwrap_or_default(),
                grid: prep.grid,
                record_every: prep.every,
                versus_ode: k == ScenarioKind::NissVsOde,
            };
            pair_error_moment(&sc, ens)?
        }
        _ => {
            let theta = cfg.input.theta.as_ref().expect("validated").build()?;
            let eq_map = sys.equilibrium_map()?;
            let th0 = theta.value(0.0);
            bp.theta_dot_sq = Profile::derivative_sq(&theta, InputNorm::L2)?;
            bp.theta_dot_sq_limsup = profile_limsup(&bp.theta_dot_sq, horizon);
            let noise = cfg.noise.clone().unwrap_or_default();
            let (input, target, u0) = if k == ScenarioKind::TrackDidc {
                (TrackingInput::Deterministic(theta), TrackingTarget::DeterministicCurve, th0.clone())
            } else if k.is_ou() {
                let sigma = noise.sigma_xi.expect("validated");
                let xi0 = point_or_zero(&noise.xi0, m, "noise.xi0")?;
                bp.sigma_xi_sq = sigma * sigma;
                bp.exi0 = xi0.iter().map(|v| v * v).sum();
                let u0: Vec<f64> = th0.iter().zip(&xi0).map(|(a, b)| a + b).collect();
                let input = CascadeInput::Ou {
                    params: OUParams::new(cert.c_hat, sigma, m)?,
                    theta,
                };
                let target = if k == ScenarioKind::TrackOuSisc {
                    TrackingTarget::StochasticCurve
                } else {
                    TrackingTarget::DeterministicCurve
                };
                (
                    TrackingInput::Cascade {
                        input,
                        v0: InitialLaw::Point(xi0),
                    },
                    target,
                    u0,
                )
            } else {
                let p = prep.jd.clone().expect("prepared");
                let u0 = noise.u0.clone().unwrap_or_else(|| th0.clone());
                check_dim("noise.u0", u0.len(), m)?;
                bp.sigma_u_sq = p.sigma_u * p.sigma_u;
                bp.a_norm_sq = p.a_norm_sq();
                bp.exi0 = u0.iter().zip(&th0).map(|(a, b)| (a - b).powi(2)).sum();
                let target = if k == ScenarioKind::TrackJdSisc {
                    TrackingTarget::StochasticCurve
                } else {
                    TrackingTarget::DeterministicCurve
                };
                (
                    TrackingInput::Cascade {
                        input: CascadeInput::Jd(p),
                        v0: InitialLaw::Point(u0.clone()),
                    },
                    target,
                    u0,
                )
            };
            let anchor = match target {
                TrackingTarget::DeterministicCurve => eq_map.eval(&th0),
                TrackingTarget::StochasticCurve => eq_map.eval(&u0),
            };
            bp.e0 = metric.dist_sq_unchecked(&x0, &anchor);
            let sc = TrackingScenario {
                sys: sys.clone(),
                eq_map,
                input,
                target,
                x0: InitialLaw::Point(x0),
                grid: prep.grid,
                record_every: prep.every,
            };
            tracking_error_moment(&sc, ens)?
        }
    };
    let env = Envelope::new(k.envelope().expect("moment kind"), bp)?;
    Ok((series, env))
}

fn alpha_pair(cfg: &ScenarioConfig, env: &Envelope, t_end: f64) -> Result<(f64, f64)> {
    let opt = match optimize_alpha(env, AlphaTarget::Limsup) {
        Ok((a, _)) => a,
        Err(_) => optimize_alpha(env, AlphaTarget::At(t_end))?.0,
    };
    let fixed = match cfg.alpha_policy {
        AlphaSetting::Fixed(a) => a,
        AlphaSetting::Named(_) => DEFAULT_FIXED_ALPHA,
    };
    Ok((fixed, opt))
}

fn finish_moments(
    cfg: &ScenarioConfig,
    series: &MomentSeries,
    env: &Envelope,
    bundle: &mut Bundle,
) -> Result<ScenarioVerdict> {
    let (fixed, opt) = alpha_pair(cfg, env, series.grid.end())?;
    let pointwise = check_envelope(series, env, cfg.alpha_policy.policy())?;
    let used = pointwise.alpha.unwrap_or(opt);
    let tail = if env.limsup(used).is_ok() {
        check_limsup(series, env, used, TAIL_FRACTION).ok()
    } else {
        None
    };
    let b_fixed = env.series(&series.grid, fixed)?;
    let b_opt = env.series(&series.grid, opt)?;
    let times: Vec<f64> = series.grid.times().collect();

    bundle.csv(
        "moments.csv",
        &["t", "mean_sq", "std_err"],
        (0..series.len()).map(|k| vec![time(times[k]), num(series.mean_sq[k]), num(series.std_err[k])]),
    )?;
    let env_rows = [(fixed, &b_fixed), (opt, &b_opt)]
        .into_iter()
        .flat_map(|(a, b)| (0..b.len()).map(move |k| (k, a, b[k])))
        .map(|(k, a, b)| vec![time(times[k]), a.to_string(), num(b)])
        .collect::<Vec<_>>();
    bundle.csv("envelope.csv", &["t", "alpha", "bound"], env_rows)?;
    let verdict = ScenarioVerdict {
        scenario_kind: cfg.scenario_kind,
        holds: pointwise.holds,
        n_paths: series.n_paths,
        master_seed: cfg.master_seed,
        alpha_fixed: Some(fixed),
        alpha_opt: Some(opt),
        pointwise,
        tail,
        gibbs: None,
    };
    bundle.json("verdict.json", &verdict)?;
    bundle.csv(
        "plotdata.csv",
        &["t", "mean_sq", "std_err", "bound_fixed_alpha", "bound_opt_alpha"],
        (0..series.len()).map(|k| {
            vec![
                time(times[k]),
                num(series.mean_sq[k]),
                num(series.std_err[k]),
                num(b_fixed[k]),
                num(b_opt[k]),
            ]
        }),
    )?;
    Ok(verdict)
}

const CLOUD_STREAM: u64 = 0xc10d;

fn run_wasserstein(cfg: &ScenarioConfig, prep: &Prepared, bundle: &mut Bundle) -> Result<ScenarioVerdict> {
    let sys = &prep.sys;
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let wc = cfg.wasserstein.clone().unwrap_or_default();
    let x0 = point_or_zero(&cfg.input.x0, n, "input.x0")?;
    let shift = point_or_zero(&wc.shift, n, "wasserstein.shift")?;
    let mut rng = RngLineage::new(cfg.master_seed ^ CLOUD_STREAM, 0).stream();
    let xs = DMatrix::from_fn(wc.samples, n, |_, j| x0[j] + wc.cloud_std * rng.normal());
    let ys = DMatrix::from_fn(wc.samples, n, |_, j| x0[j] + shift[j] + wc.cloud_std * rng.normal());
    let sc = WassersteinScenario {
        sys_x: sys.clone(),
        sys_y: sys.clone(),
        u_x: cfg.input.ux.as_ref().expect("validated").build()?,
        u_y: match &cfg.input.uy {
            Some(s) => s.build()?,
            None => InputSignal::zero(m),
        },
        x_cloud: EmpiricalMeasure::new(xs)?,
        y_cloud: EmpiricalMeasure::new(ys)?,
        grid: prep.grid,
        record_every: prep.every,
        p: wc.p,
        norm: SampleNorm::Weighted(sys.metric().clone()),
        gap_norm: InputNorm::L2,
    };
    let rep = verify_wasserstein_contraction(&sc, cfg.master_seed)?;
    bundle.csv(
        "wasserstein.csv",
        &["t", "w_p_empirical", "envelope"],
        (0..rep.times.len()).map(|k| vec![time(rep.times[k]), num(rep.w_empirical[k]), num(rep.envelope[k])]),
    )?;
    let verdict = ScenarioVerdict {
        scenario_kind: cfg.scenario_kind,
        holds: rep.verdict.holds,
        n_paths: wc.samples,
        master_seed: cfg.master_seed,
        alpha_fixed: None,
        alpha_opt: None,
        pointwise: rep.verdict.clone(),
        tail: None,
        gibbs: None,
    };
    bundle.json("verdict.json", &verdict)?;
    bundle.csv(
        "plotdata.csv",
        &["t", "w_p_empirical", "envelope", "envelope_with_slack"],
        (0..rep.times.len()).map(|k| {
            vec![
                time(rep.times[k]),
                num(rep.w_empirical[k]),
                num(rep.envelope[k]),
                num(rep.envelope[k] * (1.0 + rep.slack)),
            ]
        }),
    )?;
    Ok(verdict)
}

fn run_gibbs(cfg: &ScenarioConfig, prep: &Prepared, bundle: &mut Bundle) -> Result<ScenarioVerdict> {
    let sys = &prep.sys;
    let n = sys.state_dim();
    let gc = cfg.gibbs.clone().unwrap_or_default();
    let x0 = point_or_zero(&cfg.input.x0, n, "input.x0")?;
    let g1 = Grid1d::new(gc.lo, gc.hi, gc.points)?;
    let mut rng = RngLineage::new(cfg.master_seed, 0).stream();
    let u = InputSignal::zero(sys.input_dim());
    let rows = long_run_samples(sys, &x0, &u, &prep.grid, gc.burn_in, gc.spacing, &mut rng)?;
    let (sigma, report) = match &cfg.system {
        SystemConfig::QuadraticPotential { c, sigma, .. } => {
            let c = *c;
            let rep = match n {
                1 => {
                    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
                    gibbs_check(|x| 0.5 * c * x * x, |x| c * x, *sigma, &xs, &g1)?
                }
                2 => gibbs_check_2d(
                    |x| 0.5 * c * (x[0] * x[0] + x[1] * x[1]),
                    |x, out| {
                        out[0] = c * x[0];
                        out[1] = c * x[1];
                    },
                    *sigma,
                    &EmpiricalMeasure::from_rows(&rows)?,
                    (&g1, &g1),
                )?,
                _ => {
                    return Err(Error::Capability(format!(
                        "gibbs checks support one- and two-dimensional states, got {n}"
                    )))
                }
            };
            (*sigma, rep)
        }
        SystemConfig::QuarticPotential { c, sigma } => {
            let c = *c;
            let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let rep = gibbs_check(|x| x.powi(4) / 4.0 + 0.5 * c * x * x, |x| x.powi(3) + c * x, *sigma, &xs, &g1)?;
            (*sigma, rep)
        }
        _ => unreachable!("validated"),
    };
    let header: Vec<String> = std::iter::once("index".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    bundle.csv(
        "samples.csv",
        &header,
        rows.iter()
            .enumerate()
            .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().map(|v| num(*v))).collect()),
    )?;
    let pointwise = Verdict {
        holds: report.ks_stat < report.ks_critical,
        worst_margin: (report.ks_critical - report.ks_stat) / report.ks_critical,
        worst_t: prep.grid.end(),
        slack_rule: format!("KS < 1.63/sqrt(k) with k={} samples (sigma={sigma})", report.samples),
        alpha: None,
    };
    let verdict = ScenarioVerdict {
        scenario_kind: cfg.scenario_kind,
        holds: pointwise.holds,
        n_paths: report.samples,
        master_seed: cfg.master_seed,
        alpha_fixed: None,
        alpha_opt: None,
        pointwise,
        tail: None,
        gibbs: Some(report),
    };
    bundle.json("verdict.json", &verdict)?;
    Ok(verdict)
}

/// Result of one config within a batch.
#[derive(Debug)]
pub struct BatchEntry {
    pub config: PathBuf,
    pub outcome: Result<RunOutcome>,
}

/// Runs every `*.toml` in `dir` (sorted by name), each into
/// `<output dir>/<file stem>`.
pub fn run_batch(dir: &Path, opts: &RunOptions) -> Result<Vec<BatchEntry>> {
    let rd = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut configs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    Ok(configs
        .into_iter()
        .map(|path| {
            let outcome = load_config(&path).and_then(|cfg| {
                let stem = path.file_stem().unwrap_or_default();
                let o = RunOptions {
                    out: Some(opts.output_dir(&cfg).join(stem)),
                    ..opts.clone()
                };
                run_scenario(&cfg, &o)
            });
            BatchEntry { config: path, outcome }
        })
        .collect())
}

/// Batch exit code: 1 if any run errored, else 2 if any verdict failed.
pub fn batch_exit_code(entries: &[BatchEntry]) -> i32 {
    if entries.iter().any(|e| e.outcome.is_err()) {
        1
    } else if entries.iter().any(|e| e.outcome.as_ref().is_ok_and(|o| o.exit_code() == 2)) {
        2
    } else {
        0
    }
}
