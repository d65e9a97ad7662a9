//! TOML experiment configuration.
//!
//! A config file holds optional top-level `seed` and `out` keys and one table
//! per subcommand (`[track]`, `[pcrlb]`, ...). Each subcommand reads only its
//! own table. Relative paths are resolved against the config file's
//! directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use epitrack_core::evolution::ThresholdSearch;
use epitrack_core::{DegreeDistribution, TransitionKernel, UpdateScheme};

/// A validation failure tied to a dotted config path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub type Checked<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub generate: Option<GenerateSection>,
    pub simulate: Option<SimulateSection>,
    pub meanfield: Option<MeanfieldSection>,
    pub track: Option<TrackSection>,
    pub pcrlb: Option<PcrlbSection>,
    pub evolve: Option<EvolveSection>,
    pub threshold: Option<ThresholdSection>,
    pub ingest: Option<IngestSection>,
    pub fit: Option<FitSection>,
    pub report: Option<ReportSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Checked<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            ConfigError::new(field, e.message())
        })
    }
}

fn one() -> f64 {
    1.0
}

fn default_bin_width() -> u64 {
    epitrack_core::empirics::DEFAULT_BIN_WIDTH_MS
}

pub fn positive(field: &str, v: f64) -> Checked<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
    }
}

pub fn non_negative(field: &str, v: f64) -> Checked<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be non-negative and finite, got {v}")))
    }
}

pub fn unit(field: &str, v: f64) -> Checked<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must lie in [0, 1], got {v}")))
    }
}

pub fn at_least(field: &str, v: usize, min: usize) -> Checked<()> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be at least {min}, got {v}")))
    }
}

/// Resolves `p` against `base` and checks that it exists.
pub fn existing_file(field: &str, base: &Path, p: &Path) -> Checked<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if full.is_file() {
        Ok(full)
    } else {
        Err(ConfigError::new(field, format!("file {} does not exist", full.display())))
    }
}

fn read_text(field: &str, path: &Path) -> Checked<String> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::new(field, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    ErdosRenyi {
        nodes: usize,
        mean: f64,
        max_degree: Option<usize>,
    },
    ScaleFree {
        nodes: usize,
        gamma: f64,
        max_degree: usize,
    },
    /// Grown from a single edge; SIS runs use the simple projection.
    PreferentialAttachment { p: f64, steps: usize },
    EdgeList { path: PathBuf },
}

impl GraphSpec {
    pub fn check(&self, field: &str, base: &Path) -> Checked<GraphSpec> {
        let f = |k: &str| format!("{field}.{k}");
        match self {
            GraphSpec::ErdosRenyi { nodes, mean, max_degree } => {
                at_least(&f("nodes"), *nodes, 2)?;
                non_negative(&f("mean"), *mean)?;
                if let Some(m) = max_degree {
                    at_least(&f("max_degree"), *m, 1)?;
                }
            }
            GraphSpec::ScaleFree { nodes, gamma, max_degree } => {
                at_least(&f("nodes"), *nodes, 2)?;
                positive(&f("gamma"), *gamma)?;
                at_least(&f("max_degree"), *max_degree, 2)?;
            }
            GraphSpec::PreferentialAttachment { p, .. } => unit(&f("p"), *p)?,
            GraphSpec::EdgeList { path } => {
                return Ok(GraphSpec::EdgeList {
                    path: existing_file(&f("path"), base, path)?,
                })
            }
        }
        Ok(self.clone())
    }

    pub fn uses_seed(&self) -> bool {
        !matches!(self, GraphSpec::EdgeList { .. })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Uniform random table from its own seed.
    Random {
        max_degree: usize,
        seed: u64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        no_spontaneous: bool,
    },
    Constant {
        max_degree: usize,
        p12: f64,
        p21: f64,
        #[serde(default = "one")]
        lambda: f64,
    },
    /// `p21(l, a) = 1 - (1 - beta)^a` with constant recovery.
    Contact {
        max_degree: usize,
        beta: f64,
        recovery: f64,
        #[serde(default = "one")]
        lambda: f64,
    },
    /// `l,a,p12,p21` table.
    Csv {
        path: PathBuf,
        #[serde(default = "one")]
        lambda: f64,
    },
}

impl KernelSpec {
    pub fn build(&self, field: &str, base: &Path) -> Checked<TransitionKernel> {
        let err = |e: epitrack_core::Error| ConfigError::new(field, e);
        let k = match self {
            KernelSpec::Random {
                max_degree,
                seed,
                lambda,
                no_spontaneous,
            } => {
                let k = TransitionKernel::random(*max_degree, *lambda, *seed).map_err(err)?;
                if *no_spontaneous {
                    k.without_spontaneous_infection()
                } else {
                    k
                }
            }
            KernelSpec::Constant {
                max_degree,
                p12,
                p21,
                lambda,
            } => TransitionKernel::constant(*max_degree, *p12, *p21, *lambda).map_err(err)?,
            KernelSpec::Contact {
                max_degree,
                beta,
                recovery,
                lambda,
            } => TransitionKernel::contact(*max_degree, *beta, *recovery, *lambda).map_err(err)?,
            KernelSpec::Csv { path, lambda } => {
                let full = existing_file(&format!("{field}.path"), base, path)?;
                TransitionKernel::from_csv(&read_text(field, &full)?, *lambda).map_err(err)?
            }
        };
        Ok(k)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegreeSpec {
    PowerLaw { gamma: f64, max_degree: usize },
    Poisson { mean: f64, max_degree: usize },
    Uniform { max_degree: usize },
    /// `probs[i]` is the mass on degree `i + 1`.
    Explicit { probs: Vec<f64> },
    /// `degree,prob` table.
    Csv { path: PathBuf },
}

impl DegreeSpec {
    pub fn build(&self, field: &str, base: &Path) -> Checked<DegreeDistribution> {
        let err = |e: epitrack_core::Error| ConfigError::new(field, e);
        match self {
            DegreeSpec::PowerLaw { gamma, max_degree } => DegreeDistribution::power_law(*gamma, *max_degree),
            DegreeSpec::Poisson { mean, max_degree } => DegreeDistribution::poisson(*mean, *max_degree),
            DegreeSpec::Uniform { max_degree } => DegreeDistribution::uniform(*max_degree),
            DegreeSpec::Explicit { probs } => DegreeDistribution::new(probs.clone()),
            DegreeSpec::Csv { path } => {
                let full = existing_file(&format!("{field}.path"), base, path)?;
                DegreeDistribution::from_csv(&read_text(field, &full)?)
            }
        }
        .map_err(err)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub graph: GraphSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub graph: GraphSpec,
    pub kernel: KernelSpec,
    pub x0: f64,
    pub horizon: usize,
    #[serde(default)]
    pub scheme: UpdateScheme,
    /// Also run the mean-field map on the realised degree law.
    #[serde(default)]
    pub mean_field: bool,
}

impl SimulateSection {
    pub fn check(&self, base: &Path) -> Checked<(GraphSpec, TransitionKernel)> {
        unit("simulate.x0", self.x0)?;
        at_least("simulate.horizon", self.horizon, 1)?;
        Ok((self.graph.check("simulate.graph", base)?, self.kernel.build("simulate.kernel", base)?))
    }
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    1_000_000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanfieldSection {
    pub degrees: DegreeSpec,
    pub kernel: KernelSpec,
    pub m: usize,
    pub x0: f64,
    pub horizon: usize,
    #[serde(default = "yes")]
    pub fixed_point: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl MeanfieldSection {
    pub fn check(&self, base: &Path) -> Checked<(DegreeDistribution, TransitionKernel)> {
        at_least("meanfield.m", self.m, 1)?;
        unit("meanfield.x0", self.x0)?;
        at_least("meanfield.horizon", self.horizon, 1)?;
        positive("meanfield.tol", self.tol)?;
        let rho = self.degrees.build("meanfield.degrees", base)?;
        let k = covering_kernel("meanfield.kernel", self.kernel.build("meanfield.kernel", base)?, &rho)?;
        Ok((rho, k))
    }
}

/// Truncates `k` to the support of `rho`, rejecting kernels that are too small.
pub fn covering_kernel(field: &str, k: TransitionKernel, rho: &DegreeDistribution) -> Checked<TransitionKernel> {
    if k.max_degree() < rho.max_degree() {
        return Err(ConfigError::new(
            format!("{field}.max_degree"),
            format!("kernel covers degrees up to {}, the degree law needs {}", k.max_degree(), rho.max_degree()),
        ));
    }
    k.truncated(rho.max_degree()).map_err(|e| ConfigError::new(field, e))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Gaussian { r: f64 },
    /// Explicit per-degree binomial sample sizes.
    Binomial { gamma: Vec<usize> },
    /// Uniform sampling: degree `l` gets `round(rho(l) * budget)` draws.
    Uniform { budget: usize },
}

fn default_ma_window() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    pub degrees: DegreeSpec,
    pub kernel: KernelSpec,
    pub m: usize,
    pub x0: f64,
    pub horizon: usize,
    pub observation: ObservationSpec,
    pub prior_var: f64,
    #[serde(default)]
    pub process_noise: f64,
    #[serde(default = "default_ma_window")]
    pub ma_window: usize,
    /// VAR baseline order; 0 skips it.
    #[serde(default)]
    pub var_order: usize,
    #[serde(default)]
    pub misspecified: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcrlbSection {
    pub max_degree: usize,
    pub scale_free_gamma: f64,
    pub er_mean: f64,
    pub kernel: KernelSpec,
    pub m: usize,
    pub x0: f64,
    pub prior_var: f64,
    pub r: f64,
    pub epsilon: f64,
    pub replications: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvolveSection {
    Distribution {
        rho0: DegreeSpec,
        p: f64,
        k_start: usize,
        k_end: usize,
    },
    /// Fixed preset: degree-one start, attachment `0.2 + 0.6 alpha`.
    TwoTimescale {
        size: usize,
        slow_steps: usize,
        kernel_seed: u64,
        sigma: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub rho0: DegreeSpec,
    pub kernel: KernelSpec,
    pub p_grid: Vec<f64>,
    pub k_start: usize,
    pub k_end: usize,
    /// Also search the threshold on the mean-field map.
    #[serde(default)]
    pub empirical: bool,
}

impl ThresholdSection {
    pub fn search(&self) -> Option<ThresholdSearch> {
        self.empirical.then(ThresholdSearch::default)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub log: PathBuf,
    pub hashtag: String,
    pub delta: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width_ms: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub graph: GraphSpec,
    #[serde(default = "one_usize")]
    pub l_min: usize,
    /// Fits the law truncated to `l_min..=l_max`.
    pub l_max: Option<usize>,
    /// Picks `l_min` in `1..=auto_l_min` by the KS distance.
    pub auto_l_min: Option<usize>,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogSource {
    File {
        path: PathBuf,
    },
    /// SIS run on a scale-free graph written out as an event log.
    Synthetic {
        nodes: usize,
        gamma: f64,
        max_degree: usize,
        spontaneous: f64,
        beta: f64,
        bins: usize,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub source: LogSource,
    pub hashtag: String,
    pub delta: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width_ms: u64,
    #[serde(default)]
    pub add_one: bool,
    pub fit_max_degree: Option<usize>,
}
