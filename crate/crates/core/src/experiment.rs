//! JSON-configured experiments and their CSV output.
//!
//! Three experiment families are supported: a sweep over a common Rician
//! factor, a sweep over the side length of the service area (network
//! density), and the per-UE spectral efficiency distribution of one dense
//! network. Every family evaluates each configured scheme under both bounds
//! on a number of independent setups and writes one row per
//! (setup, sweep value, scheme, bound, UE or aggregate).
//!
//! # Config schema
//!
//! ```json
//! {
//!   "experiment": "kappa_sweep",
//!   "preset": "desk",
//!   "area": { "ap_count": 25, "ue_count": 8 },
//!   "schemes": ["MMSE", "LMMSE_LSFD", "LTMMSE"],
//!   "pc_exponent": -1.0,
//!   "kappa_grid": [0, 1, 5, 10, 100],
//!   "d_grid": [200, {"side_length_m": 600, "p_max_w": 0.06}, 1000],
//!   "cdf_point": {"side_length_m": 200, "p_max_w": 0.02},
//!   "setups": 10,
//!   "stat_budget": 300,
//!   "eval_budget": 300,
//!   "seed": "0xCE11F4EE",
//!   "out_dir": "results"
//! }
//! ```
//!
//! Only `experiment` is required. Unknown keys are rejected. `preset`
//! selects the base network (`"reference"`, the default, or `"desk"`) and
//! `area` overrides individual fields of it. A bare number in `d_grid` is a
//! side length whose maximum power scales linearly from 100 mW at 1 km.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{Scheme, MIN_STAT_DRAWS};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, run_monte_carlo, Bound, Budgets, SeReport, MIN_EVAL_DRAWS};
use crate::rng::DEFAULT_SEED;
use crate::scenario::AreaConfig;
use crate::setup::Setup;

/// Maximum UE power at a 1 km side; the density sweep scales it linearly.
pub const REFERENCE_P_MAX_W: f64 = 0.1;

pub const CSV_HEADER: &str = "experiment,setup,sweep,scheme,bound,ue,se,ci,stat_draws,eval_draws,seed";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid config: {}", .0.join("; "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    KappaSweep,
    DensitySweep,
    Cdf,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::KappaSweep => "kappa_sweep",
            ExperimentKind::DensitySweep => "density_sweep",
            ExperimentKind::Cdf => "cdf",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "kappa_sweep" => Ok(ExperimentKind::KappaSweep),
            "density_sweep" => Ok(ExperimentKind::DensitySweep),
            "cdf" => Ok(ExperimentKind::Cdf),
            other => Err(ConfigError::Validation(vec![format!(
                "unknown experiment {other:?} (expected kappa_sweep, density_sweep or cdf)"
            )])),
        }
    }
}

/// Side length of the service area with its maximum UE power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityPoint {
    pub side_length_m: f64,
    pub p_max_w: f64,
}

impl DensityPoint {
    /// Pairs `side` with a power proportional to it.
    pub fn scaled(side_length_m: f64) -> Self {
        Self { side_length_m, p_max_w: REFERENCE_P_MAX_W * side_length_m / 1000.0 }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub area: AreaConfig,
    pub schemes: Vec<Scheme>,
    pub pc_exponent: f64,
    pub kappa_grid: Vec<f64>,
    pub d_grid: Vec<DensityPoint>,
    pub cdf_point: DensityPoint,
    pub setups: usize,
    pub stat_budget: usize,
    pub eval_budget: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// A configuration with the documented defaults for `experiment`.
    pub fn new(experiment: ExperimentKind) -> Self {
        Self::with_preset(experiment, Preset::Reference)
    }

    pub fn with_preset(experiment: ExperimentKind, preset: Preset) -> Self {
        let budgets = Budgets::default();
        let (area, stat_budget, eval_budget) = match preset {
            Preset::Reference => (AreaConfig::default(), budgets.statistics, budgets.evaluation),
            Preset::Desk => (AreaConfig::desk_scale(), 300, 300),
        };
        Self {
            experiment,
            area,
            schemes: Scheme::DEFAULT_SET.to_vec(),
            pc_exponent: -1.0,
            kappa_grid: vec![0.0, 1.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            d_grid: [200.0, 400.0, 600.0, 800.0, 1000.0].into_iter().map(DensityPoint::scaled).collect(),
            cdf_point: DensityPoint::scaled(200.0),
            setups: 10,
            stat_budget,
            eval_budget,
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from("results"),
        }
    }

    pub fn budgets(&self) -> Budgets {
        Budgets { statistics: self.stat_budget, evaluation: self.eval_budget }
    }

    /// Lists every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.area.violations().into_iter().map(|v| format!("area: {v}")).collect();
        if self.schemes.is_empty() {
            out.push("schemes must not be empty".into());
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                out.push(format!("scheme {s} is listed twice"));
            }
        }
        if !self.pc_exponent.is_finite() {
            out.push("pc_exponent must be finite".into());
        }
        if self.setups < 1 {
            out.push("setups must be at least 1".into());
        }
        if self.setups >= 1 << 28 {
            out.push("setups must be below 2^28".into());
        }
        let needs_stats = self.schemes.iter().any(|s| matches!(s, Scheme::LmmseLsfd | Scheme::Ltmmse));
        if needs_stats && self.stat_budget < MIN_STAT_DRAWS {
            out.push(format!("stat_budget must be at least {MIN_STAT_DRAWS}"));
        }
        if self.eval_budget < MIN_EVAL_DRAWS {
            out.push(format!("eval_budget must be at least {MIN_EVAL_DRAWS}"));
        }
        if self.eval_budget > u32::MAX as usize || self.stat_budget > u32::MAX as usize {
            out.push("budgets must fit in 32 bits".into());
        }
        let check_point = |out: &mut Vec<String>, what: &str, p: &DensityPoint| {
            if !(p.side_length_m > 0.0 && p.side_length_m.is_finite()) {
                out.push(format!("{what}: side_length_m must be positive"));
            }
            if !(p.p_max_w > 0.0 && p.p_max_w.is_finite()) {
                out.push(format!("{what}: p_max_w must be positive"));
            }
        };
        match self.experiment {
            ExperimentKind::KappaSweep => {
                if self.kappa_grid.is_empty() {
                    out.push("kappa_grid must not be empty for kappa_sweep".into());
                }
                if self.kappa_grid.iter().any(|k| !(*k >= 0.0)) {
                    out.push("kappa_grid values must be nonnegative".into());
                }
            }
            ExperimentKind::DensitySweep => {
                if self.d_grid.is_empty() {
                    out.push("d_grid must not be empty for density_sweep".into());
                }
                for (i, p) in self.d_grid.iter().enumerate() {
                    check_point(&mut out, &format!("d_grid[{i}]"), p);
                }
            }
            ExperimentKind::Cdf => check_point(&mut out, "cdf_point", &self.cdf_point),
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(v))
        }
    }

    /// Sweep values and the network used at each of them.
    pub fn sweep_points(&self) -> Vec<(f64, AreaConfig)> {
        match self.experiment {
            ExperimentKind::KappaSweep => self
                .kappa_grid
                .iter()
                .map(|&k| (k, AreaConfig { kappa_override: Some(k), ..self.area.clone() }))
                .collect(),
            ExperimentKind::DensitySweep => self.d_grid.iter().map(|p| (p.side_length_m, self.area_at(p))).collect(),
            ExperimentKind::Cdf => vec![(self.cdf_point.side_length_m, self.area_at(&self.cdf_point))],
        }
    }

    fn area_at(&self, p: &DensityPoint) -> AreaConfig {
        AreaConfig { side_length_m: p.side_length_m, p_max_w: p.p_max_w, ..self.area.clone() }
    }

    /// Number of rows [`run`] produces for this configuration.
    pub fn expected_row_count(&self) -> usize {
        let per_scheme_bound = self.setups * (self.area.ue_count + 2) + 2;
        self.sweep_points().len() * self.schemes.len() * 2 * per_scheme_bound
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Reference,
    Desk,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Number(u64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DensityEntry {
    Side(f64),
    Point(DensityPoint),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AreaOverrides {
    side_length_m: Option<f64>,
    ap_count: Option<usize>,
    ue_count: Option<usize>,
    antennas_per_ap: Option<usize>,
    height_diff_m: Option<f64>,
    carrier_freq_mhz: Option<f64>,
    shadow_std_db: Option<f64>,
    pilot_count: Option<usize>,
    coherence_symbols: Option<usize>,
    p_max_w: Option<f64>,
    pilot_power_w: Option<f64>,
    noise_power_w: Option<f64>,
    antenna_spacing: Option<f64>,
    azimuth_std_deg: Option<f64>,
    elevation_std_deg: Option<f64>,
    kappa_override: Option<f64>,
}

impl AreaOverrides {
    fn apply(self, a: &mut AreaConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { a.$f = v; } )* };
        }
        set!(
            side_length_m,
            ap_count,
            ue_count,
            antennas_per_ap,
            height_diff_m,
            carrier_freq_mhz,
            shadow_std_db,
            pilot_count,
            coherence_symbols,
            p_max_w,
            noise_power_w,
            antenna_spacing,
            azimuth_std_deg,
            elevation_std_deg
        );
        if self.pilot_power_w.is_some() {
            a.pilot_power_w = self.pilot_power_w;
        }
        if self.kappa_override.is_some() {
            a.kappa_override = self.kappa_override;
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    area: AreaOverrides,
    schemes: Option<Vec<Scheme>>,
    pc_exponent: Option<f64>,
    kappa_grid: Option<Vec<f64>>,
    d_grid: Option<Vec<DensityEntry>>,
    cdf_point: Option<DensityPoint>,
    setups: Option<usize>,
    stat_budget: Option<usize>,
    eval_budget: Option<usize>,
    seed: Option<SeedValue>,
    out_dir: Option<PathBuf>,
}

/// Values given on the command line; they take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Parses a seed written in decimal or with a `0x` prefix.
pub fn parse_seed(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => s.replace('_', "").parse().ok(),
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    parse_config_str_with(&text, overrides)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_str_with(text, &Overrides::default())
}

/// Strict parse of a JSON config. An empty document counts as `{}`.
pub fn parse_config_str_with(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = if text.trim().is_empty() {
        RawConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    };
    let mut errors = Vec::new();
    let experiment = overrides.experiment.or(raw.experiment);
    let Some(experiment) = experiment else {
        errors.push("experiment is required (kappa_sweep, density_sweep or cdf)".to_string());
        return Err(ConfigError::Validation(errors));
    };
    let mut cfg = ExperimentConfig::with_preset(experiment, raw.preset);
    raw.area.apply(&mut cfg.area);
    if let Some(s) = raw.schemes {
        cfg.schemes = s;
    }
    if let Some(v) = raw.pc_exponent {
        cfg.pc_exponent = v;
    }
    if let Some(g) = raw.kappa_grid {
        cfg.kappa_grid = g;
    }
    if let Some(g) = raw.d_grid {
        cfg.d_grid = g
            .into_iter()
            .map(|e| match e {
                DensityEntry::Side(d) => DensityPoint::scaled(d),
                DensityEntry::Point(p) => p,
            })
            .collect();
    }
    if let Some(p) = raw.cdf_point {
        cfg.cdf_point = p;
    }
    if let Some(s) = raw.setups {
        cfg.setups = s;
    }
    if let Some(b) = raw.stat_budget {
        cfg.stat_budget = b;
    }
    if let Some(b) = raw.eval_budget {
        cfg.eval_budget = b;
    }
    match raw.seed {
        Some(SeedValue::Number(n)) => cfg.seed = n,
        Some(SeedValue::Text(t)) => match parse_seed(&t) {
            Some(n) => cfg.seed = n,
            None => errors.push(format!("seed {t:?} is not a decimal or 0x-prefixed 64-bit integer")),
        },
        None => {}
    }
    if let Some(d) = raw.out_dir {
        cfg.out_dir = d;
    }
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(d) = &overrides.out_dir {
        cfg.out_dir = d.clone();
    }
    errors.extend(cfg.violations());
    if !errors.is_empty() {
        return Err(ConfigError::Validation(errors));
    }
    if cfg.pc_exponent != 0.0 && cfg.pc_exponent != -1.0 {
        warn!("pc_exponent {} is outside the usual {{-1, 0}}; using it as given", cfg.pc_exponent);
    }
    Ok(cfg)
}

/// Setup column: a setup index or the mean over setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupTag {
    Index(usize),
    Mean,
}

/// UE column: a UE index or an aggregate over UEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UeTag {
    Index(usize),
    Min,
    Sum,
}

impl fmt::Display for SetupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetupTag::Index(i) => write!(f, "{i}"),
            SetupTag::Mean => f.write_str("mean"),
        }
    }
}

impl fmt::Display for UeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UeTag::Index(i) => write!(f, "{i}"),
            UeTag::Min => f.write_str("min"),
            UeTag::Sum => f.write_str("sum"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub setup: SetupTag,
    pub sweep: f64,
    pub scheme: Scheme,
    pub bound: Bound,
    pub ue: UeTag,
    pub se: f64,
    pub ci: f64,
    pub stat_draws: usize,
    pub eval_draws: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.16e},{:.16e},{},{},{}",
            self.experiment,
            self.setup,
            fmt_float(self.sweep),
            self.scheme,
            self.bound.name(),
            self.ue,
            self.se,
            self.ci,
            self.stat_draws,
            self.eval_draws,
            self.seed
        )
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One point of an empirical CDF of per-UE spectral efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPoint {
    pub scheme: Scheme,
    pub bound: Bound,
    /// 1-based rank in the pooled sample.
    pub rank: usize,
    pub se: f64,
    pub cdf: f64,
}

/// Reports of every scheme on one setup at one sweep value.
#[derive(Debug, Clone)]
pub struct SetupResult {
    pub sweep: f64,
    pub setup: usize,
    pub reports: Vec<SeReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub results: Vec<SetupResult>,
    pub rows: Vec<ResultRow>,
    pub cdf: Option<Vec<CdfPoint>>,
}

impl RunOutput {
    /// Mean over setups of an aggregate row, as `(se, ci)`.
    pub fn mean_aggregate(&self, sweep: f64, scheme: Scheme, bound: Bound, ue: UeTag) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.setup == SetupTag::Mean && r.sweep == sweep && r.scheme == scheme && r.bound == bound && r.ue == ue)
            .map(|r| (r.se, r.ci))
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

/// Header plus one line per row, without the timestamp comment.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 120);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn cdf_to_csv(points: &[CdfPoint]) -> String {
    let mut s = String::from("scheme,bound,rank,se,cdf\n");
    for p in points {
        s.push_str(&format!("{},{},{},{:.16e},{:.16e}\n", p.scheme, p.bound.name(), p.rank, p.se, p.cdf));
    }
    s
}

/// Drops `#` comment lines, e.g. the timestamp written by [`write_outputs`].
pub fn strip_comments(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Runs every setup at every sweep point and collects rows in a fixed order.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let points = cfg.sweep_points();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..cfg.setups).map(move |s| (p, s))).collect();
    info!(
        "{}: {} sweep points x {} setups, budgets {}/{}",
        cfg.experiment,
        points.len(),
        cfg.setups,
        cfg.stat_budget,
        cfg.eval_budget
    );
    let results: Result<Vec<SetupResult>> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let (sweep, area) = &points[p];
            // Every sweep point reuses the same setup streams.
            let setup = Setup::generate(area, cfg.pc_exponent, cfg.seed, s as u32)?;
            let reports = run_monte_carlo(&setup, &cfg.schemes, cfg.budgets(), cfg.seed, s as u32)?;
            for r in &reports {
                for flag in &r.flags {
                    warn!("sweep {sweep}, setup {s}, {}: {flag}", r.scheme);
                }
            }
            Ok(SetupResult { sweep: *sweep, setup: s, reports })
        })
        .collect();
    let results = results?;
    let rows = build_rows(cfg, &points, &results);
    let cdf = (cfg.experiment == ExperimentKind::Cdf).then(|| build_cdf(cfg, &results));
    Ok(RunOutput { config: cfg.clone(), results, rows, cdf })
}

fn build_rows(cfg: &ExperimentConfig, points: &[(f64, AreaConfig)], results: &[SetupResult]) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(cfg.expected_row_count());
    for (p, (sweep, _)) in points.iter().enumerate() {
        let at_point = &results[p * cfg.setups..(p + 1) * cfg.setups];
        for (s_idx, &scheme) in cfg.schemes.iter().enumerate() {
            for bound in [Bound::Uatf, Bound::Cd] {
                let mut mins = Vec::with_capacity(cfg.setups);
                let mut sums = Vec::with_capacity(cfg.setups);
                let mut stat_draws = 0;
                for res in at_point {
                    let report = &res.reports[s_idx];
                    stat_draws = report.stat_draws;
                    let row = |ue: UeTag, se: f64, ci: f64| ResultRow {
                        experiment: cfg.experiment,
                        setup: SetupTag::Index(res.setup),
                        sweep: *sweep,
                        scheme,
                        bound,
                        ue,
                        se,
                        ci,
                        stat_draws: report.stat_draws,
                        eval_draws: report.draw_count,
                        seed: cfg.seed,
                    };
                    let (values, cis) = report.values(bound);
                    for (k, (&se, &ci)) in values.iter().zip(cis).enumerate() {
                        rows.push(row(UeTag::Index(k), se, ci));
                    }
                    let agg = aggregate(values, cis);
                    rows.push(row(UeTag::Min, agg.min, agg.min_ci));
                    rows.push(row(UeTag::Sum, agg.sum, agg.sum_ci));
                    mins.push((agg.min, agg.min_ci));
                    sums.push((agg.sum, agg.sum_ci));
                }
                for (ue, pairs) in [(UeTag::Min, &mins), (UeTag::Sum, &sums)] {
                    let (se, ci) = mean_with_ci(pairs);
                    rows.push(ResultRow {
                        experiment: cfg.experiment,
                        setup: SetupTag::Mean,
                        sweep: *sweep,
                        scheme,
                        bound,
                        ue,
                        se,
                        ci,
                        stat_draws,
                        eval_draws: cfg.eval_budget,
                        seed: cfg.seed,
                    });
                }
            }
        }
    }
    rows
}

/// Mean of independent estimates; the half-width combines their Monte
/// Carlo half-widths only, not the spread across setups.
fn mean_with_ci(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ci = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / n;
    (mean, ci)
}

fn build_cdf(cfg: &ExperimentConfig, results: &[SetupResult]) -> Vec<CdfPoint> {
    let mut out = Vec::new();
    for (s_idx, &scheme) in cfg.schemes.iter().enumerate() {
        for bound in [Bound::Uatf, Bound::Cd] {
            let mut pooled: Vec<f64> = results.iter().flat_map(|r| r.reports[s_idx].values(bound).0.to_vec()).collect();
            pooled.sort_by(f64::total_cmp);
            let n = pooled.len() as f64;
            out.extend(pooled.into_iter().enumerate().map(|(i, se)| CdfPoint {
                scheme,
                bound,
                rank: i + 1,
                se,
                cdf: (i + 1) as f64 / n,
            }));
        }
    }
    out
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(f, "# generated at unix time {stamp}").map_err(io)?;
    f.write_all(body.as_bytes()).map_err(io)?;
    Ok(())
}

/// Writes `<experiment>.csv` (and `cdf_points.csv` for the CDF experiment)
/// into the configured output directory. Returns the written paths.
pub fn write_outputs(out: &RunOutput) -> Result<Vec<PathBuf>> {
    let dir = &out.config.out_dir;
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let main = dir.join(format!("{}.csv", out.config.experiment));
    write_file(&main, &out.to_csv())?;
    let mut written = vec![main];
    if let Some(points) = &out.cdf {
        let path = dir.join("cdf_points.csv");
        write_file(&path, &cdf_to_csv(points))?;
        written.push(path);
    }
    Ok(written)
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment == kind {
        Ok(())
    } else {
        Err(Error::invalid(format!("config is for {}, not {kind}", cfg.experiment)))
    }
}

/// Minimum and sum SE over a common Rician factor.
pub fn run_kappa_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_kind(cfg, ExperimentKind::KappaSweep)?;
    run(cfg)
}

/// Minimum and sum SE over the side length, with distance-dependent κ.
pub fn run_density_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_kind(cfg, ExperimentKind::DensitySweep)?;
    run(cfg)
}

/// Pooled per-UE SE distribution of one network.
pub fn run_cdf(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_kind(cfg, ExperimentKind::Cdf)?;
    run(cfg)
}
