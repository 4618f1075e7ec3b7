//! Run configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! [model]
//! geometry = ladder
//! n = 4
//! gamma_c_khz = 2
//!
//! [solver]
//! solver = auto
//! chi_schedule = 64, 128
//!
//! [experiment]
//! experiment = missing
//! p_grid = 0, 0.25, 0.5, 0.75, 1
//! ```
//!
//! Physical inputs are given in nm, MHz, kHz and µs and kept that way in
//! [`RunConfig`]; [`RunConfig::channel_spec`] and [`RunConfig::solver_config`]
//! are the single place where they are converted to rad/µs and µs⁻¹. Keys may
//! appear before any section header or in their own section. Unknown keys,
//! repeated keys and keys in the wrong section are errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::experiments::{mask_string, parse_mask, SolverChoice, SolverConfig};
use crate::model::{
    khz_to_rate, mhz_to_angular, spaced_spec, uniform_spec, ChannelSpec, Geometry, GeometryKind,
};

/// Inter-spin spacing used by the missing-spin and disorder studies unless
/// `spacing_nm` is given.
pub const DEFAULT_STUDY_SPACING_NM: f64 = 40.0 / 13.0;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Experiment {
    Dynamics,
    LengthSweep,
    Missing,
    Disorder,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dynamics => "dynamics",
            Experiment::LengthSweep => "length_sweep",
            Experiment::Missing => "missing",
            Experiment::Disorder => "disorder",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamics" => Ok(Experiment::Dynamics),
            "length_sweep" => Ok(Experiment::LengthSweep),
            "missing" => Ok(Experiment::Missing),
            "disorder" => Ok(Experiment::Disorder),
            _ => Err(Error::Usage(format!("unknown experiment '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // [model]
    pub geometry: GeometryKind,
    pub n: usize,
    pub separation_nm: f64,
    /// Fixed inter-spin spacing; overrides `separation_nm` when set.
    pub spacing_nm: Option<f64>,
    pub gamma_nv_khz: f64,
    pub gamma_c_khz: f64,
    pub epsilon_mhz: f64,
    pub missing_mask: Option<Vec<bool>>,
    // [solver]
    pub solver: SolverChoice,
    pub dt_us: Option<f64>,
    pub t_max_us: Option<f64>,
    pub sample_every: usize,
    pub chi_schedule: Vec<usize>,
    pub cutoff: f64,
    pub trotter_order: u8,
    pub tolerance: f64,
    pub max_dense_spins: usize,
    // [experiment]
    pub experiment: Experiment,
    pub n_list: Vec<usize>,
    pub gamma_c_list_khz: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub sigma_mhz: Vec<f64>,
    /// Read `sigma_mhz` as multiples of the ideal coupling instead.
    pub sigma_relative: bool,
    pub randomize_g: bool,
    pub realizations: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        RunConfig {
            geometry: GeometryKind::Chain,
            n: 1,
            separation_nm: 40.0,
            spacing_nm: None,
            gamma_nv_khz: 0.1,
            gamma_c_khz: 2.0,
            epsilon_mhz: 0.0,
            missing_mask: None,
            solver: s.choice,
            dt_us: None,
            t_max_us: None,
            sample_every: s.sample_every,
            chi_schedule: s.chi_schedule,
            cutoff: s.cutoff,
            trotter_order: s.trotter_order,
            tolerance: s.convergence_tol,
            max_dense_spins: s.max_dense_spins,
            experiment: Experiment::Dynamics,
            n_list: (1..=6).collect(),
            gamma_c_list_khz: vec![2.0],
            p_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            sigma_mhz: vec![0.0],
            sigma_relative: false,
            randomize_g: false,
            realizations: 100,
            seed: 0,
            output: PathBuf::from("spinchannel.csv"),
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "geometry",
    "n",
    "separation_nm",
    "spacing_nm",
    "gamma_nv_khz",
    "gamma_c_khz",
    "epsilon_mhz",
    "missing_mask",
];
const SOLVER_KEYS: &[&str] = &[
    "solver",
    "dt_us",
    "t_max_us",
    "sample_every",
    "chi_schedule",
    "cutoff",
    "trotter_order",
    "tolerance",
    "max_dense_spins",
];
const EXPERIMENT_KEYS: &[&str] = &[
    "experiment",
    "n_list",
    "gamma_c_list_khz",
    "p_grid",
    "sigma_mhz",
    "sigma_relative",
    "randomize_g",
    "realizations",
    "seed",
    "output",
];

fn section_of(key: &str) -> Option<&'static str> {
    if MODEL_KEYS.contains(&key) {
        Some("model")
    } else if SOLVER_KEYS.contains(&key) {
        Some("solver")
    } else if EXPERIMENT_KEYS.contains(&key) {
        Some("experiment")
    } else {
        None
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, key, format!("cannot read '{v}' as a number")))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(line, key, x.trim())).collect()
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::parse(line, key, format!("expected true or false, got '{v}'"))),
    }
}

fn optional(v: &str) -> Option<&str> {
    match v {
        "" | "none" => None,
        _ => Some(v),
    }
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Sets one key from its text value. `line` is reported in errors; flags
    /// use line 0.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value.trim();
        let wrap = |e: Error| match e {
            Error::Parse { .. } => e,
            other => Error::parse(line, key, other.to_string()),
        };
        match key {
            "geometry" => {
                self.geometry = v.parse().map_err(|m: String| Error::parse(line, key, m))?
            }
            "n" => self.n = num(line, key, v)?,
            "separation_nm" => self.separation_nm = num(line, key, v)?,
            "spacing_nm" => {
                self.spacing_nm = optional(v).map(|x| num(line, key, x)).transpose()?
            }
            "gamma_nv_khz" => self.gamma_nv_khz = num(line, key, v)?,
            "gamma_c_khz" => self.gamma_c_khz = num(line, key, v)?,
            "epsilon_mhz" => self.epsilon_mhz = num(line, key, v)?,
            "missing_mask" => {
                self.missing_mask = optional(v).map(parse_mask).transpose().map_err(wrap)?
            }
            "solver" => self.solver = v.parse().map_err(wrap)?,
            "dt_us" => self.dt_us = optional(v).map(|x| num(line, key, x)).transpose()?,
            "t_max_us" => self.t_max_us = optional(v).map(|x| num(line, key, x)).transpose()?,
            "sample_every" => self.sample_every = num(line, key, v)?,
            "chi_schedule" => self.chi_schedule = list(line, key, v)?,
            "cutoff" => self.cutoff = num(line, key, v)?,
            "trotter_order" => self.trotter_order = num(line, key, v)?,
            "tolerance" => self.tolerance = num(line, key, v)?,
            "max_dense_spins" => self.max_dense_spins = num(line, key, v)?,
            "experiment" => self.experiment = v.parse().map_err(wrap)?,
            "n_list" => self.n_list = list(line, key, v)?,
            "gamma_c_list_khz" => self.gamma_c_list_khz = list(line, key, v)?,
            "p_grid" => self.p_grid = list(line, key, v)?,
            "sigma_mhz" => self.sigma_mhz = list(line, key, v)?,
            "sigma_relative" => self.sigma_relative = flag(line, key, v)?,
            "randomize_g" => self.randomize_g = flag(line, key, v)?,
            "realizations" => self.realizations = num(line, key, v)?,
            "seed" => self.seed = num(line, key, v)?,
            "output" => {
                if v.is_empty() {
                    return Err(Error::parse(line, key, "output path is empty"));
                }
                self.output = PathBuf::from(v)
            }
            _ => return Err(Error::parse(line, key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::parse(0, key, msg));
        if self.n == 0 {
            return bad("n", "channel needs at least one site".into());
        }
        if !(self.separation_nm.is_finite() && self.separation_nm > 0.0) {
            return bad("separation_nm", format!("must be positive, got {}", self.separation_nm));
        }
        if let Some(s) = self.spacing_nm {
            if !(s.is_finite() && s > 0.0) {
                return bad("spacing_nm", format!("must be positive, got {s}"));
            }
        }
        for (key, v) in [
            ("gamma_nv_khz", self.gamma_nv_khz),
            ("gamma_c_khz", self.gamma_c_khz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be non-negative, got {v}"));
            }
        }
        if !self.epsilon_mhz.is_finite() {
            return bad("epsilon_mhz", "must be finite".into());
        }
        if let Some(mask) = &self.missing_mask {
            let spins = Geometry::new(self.geometry, self.n)?.channel_spins();
            if mask.len() != spins {
                return bad(
                    "missing_mask",
                    format!("has {} entries, channel has {spins} spins", mask.len()),
                );
            }
        }
        if let Some(dt) = self.dt_us {
            if !(dt.is_finite() && dt > 0.0) {
                return bad("dt_us", format!("must be positive, got {dt}"));
            }
        }
        if let Some(t) = self.t_max_us {
            if !(t.is_finite() && t >= 0.0) {
                return bad("t_max_us", format!("must be non-negative, got {t}"));
            }
        }
        if self.sample_every == 0 {
            return bad("sample_every", "must be at least 1".into());
        }
        if self.chi_schedule.is_empty()
            || self.chi_schedule.contains(&0)
            || self.chi_schedule.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("chi_schedule", "needs positive, strictly increasing values".into());
        }
        if !(0.0..1.0).contains(&self.cutoff) {
            return bad("cutoff", format!("must lie in [0, 1), got {}", self.cutoff));
        }
        if !matches!(self.trotter_order, 1 | 2) {
            return bad("trotter_order", format!("must be 1 or 2, got {}", self.trotter_order));
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance", format!("must be positive, got {}", self.tolerance));
        }
        if self.max_dense_spins == 0 {
            return bad("max_dense_spins", "must be at least 1".into());
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list", "needs one or more positive lengths".into());
        }
        if self.gamma_c_list_khz.is_empty()
            || self.gamma_c_list_khz.iter().any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return bad("gamma_c_list_khz", "needs one or more non-negative rates".into());
        }
        if self.p_grid.is_empty() || self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("p_grid", "needs probabilities in [0, 1]".into());
        }
        if self.sigma_mhz.is_empty() || self.sigma_mhz.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma_mhz", "needs one or more non-negative values".into());
        }
        if self.realizations == 0 {
            return bad("realizations", "must be at least 1".into());
        }
        Ok(())
    }

    /// Writes the configuration in the text format; `parse_config` reads it
    /// back unchanged.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "geometry = {}", self.geometry.name());
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "separation_nm = {:?}", self.separation_nm);
        let _ = writeln!(s, "spacing_nm = {}", opt(self.spacing_nm));
        let _ = writeln!(s, "gamma_nv_khz = {:?}", self.gamma_nv_khz);
        let _ = writeln!(s, "gamma_c_khz = {:?}", self.gamma_c_khz);
        let _ = writeln!(s, "epsilon_mhz = {:?}", self.epsilon_mhz);
        let mask = self.missing_mask.as_deref().map(mask_string);
        let _ = writeln!(s, "missing_mask = {}", mask.unwrap_or_else(|| "none".into()));
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "solver = {}", self.solver.name());
        let _ = writeln!(s, "dt_us = {}", opt(self.dt_us));
        let _ = writeln!(s, "t_max_us = {}", opt(self.t_max_us));
        let _ = writeln!(s, "sample_every = {}", self.sample_every);
        let _ = writeln!(s, "chi_schedule = {}", join(&self.chi_schedule));
        let _ = writeln!(s, "cutoff = {:?}", self.cutoff);
        let _ = writeln!(s, "trotter_order = {}", self.trotter_order);
        let _ = writeln!(s, "tolerance = {:?}", self.tolerance);
        let _ = writeln!(s, "max_dense_spins = {}", self.max_dense_spins);
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "experiment = {}", self.experiment.name());
        let _ = writeln!(s, "n_list = {}", join(&self.n_list));
        let _ = writeln!(s, "gamma_c_list_khz = {}", join(&self.gamma_c_list_khz));
        let _ = writeln!(s, "p_grid = {}", join(&self.p_grid));
        let _ = writeln!(s, "sigma_mhz = {}", join(&self.sigma_mhz));
        let _ = writeln!(s, "sigma_relative = {}", self.sigma_relative);
        let _ = writeln!(s, "randomize_g = {}", self.randomize_g);
        let _ = writeln!(s, "realizations = {}", self.realizations);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output = {}", self.output.display());
        s
    }

    /// Channel spec of length `n` in canonical units. Dynamics and length
    /// sweeps divide `separation_nm` evenly unless `spacing_nm` is set;
    /// the missing-spin and disorder studies use a fixed spacing.
    pub fn channel_spec_for(&self, n: usize, gamma_c_khz: f64) -> Result<ChannelSpec> {
        let (nv, c) = (khz_to_rate(self.gamma_nv_khz), khz_to_rate(gamma_c_khz));
        let fixed = match self.experiment {
            Experiment::Missing | Experiment::Disorder => {
                Some(self.spacing_nm.unwrap_or(DEFAULT_STUDY_SPACING_NM))
            }
            _ => self.spacing_nm,
        };
        let mut spec = match fixed {
            Some(r) => spaced_spec(self.geometry, n, r, nv, c)?,
            None => uniform_spec(self.geometry, n, self.separation_nm, nv, c)?,
        };
        spec.epsilon = mhz_to_angular(self.epsilon_mhz);
        Ok(spec)
    }

    /// The configured channel, with the missing mask applied.
    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        let spec = self.channel_spec_for(self.n, self.gamma_c_khz)?;
        match &self.missing_mask {
            Some(m) => spec.with_missing(m.clone()),
            None => Ok(spec),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            choice: self.solver,
            dt: self.dt_us,
            t_max: self.t_max_us,
            sample_every: self.sample_every,
            chi_schedule: self.chi_schedule.clone(),
            cutoff: self.cutoff,
            convergence_tol: self.tolerance,
            trotter_order: self.trotter_order,
            max_dense_spins: self.max_dense_spins,
            ..SolverConfig::default()
        }
    }

    /// σ values in rad/µs for a base spec.
    pub fn sigmas(&self, base: &ChannelSpec) -> Vec<f64> {
        self.sigma_mhz
            .iter()
            .map(|&s| {
                if self.sigma_relative {
                    s * base.max_coupling()
                } else {
                    mhz_to_angular(s)
                }
            })
            .collect()
    }
}

/// Parses a configuration text on top of the defaults and validates it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section: Option<String> = None;
    let mut seen = Vec::<(String, usize)>::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, content, "unterminated section header"))?
                .trim();
            if !matches!(name, "model" | "solver" | "experiment") {
                return Err(Error::parse(line, name, "unknown section"));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, content, "expected key = value"))?;
        let key = key.trim();
        let home = section_of(key).ok_or_else(|| Error::parse(line, key, "unknown key"))?;
        if let Some(s) = &section {
            if s != home {
                return Err(Error::parse(
                    line,
                    key,
                    format!("belongs in [{home}], found in [{s}]"),
                ));
            }
        }
        if seen.iter().any(|(k, _)| k == key) {
            return Err(Error::parse(line, key, "key given twice"));
        }
        seen.push((key.to_string(), line));
        cfg.set(key, value, line)?;
    }
    cfg.validate().map_err(|e| match e {
        Error::Parse { key, message, .. } => {
            let line = seen.iter().find(|(k, _)| *k == key).map_or(0, |&(_, l)| l);
            Error::parse(line, key, message)
        }
        other => other,
    })?;
    Ok(cfg)
}
