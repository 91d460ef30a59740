//! Run configuration: flat `key = value` lines with dotted section names.
//!
//! ```text
//! # comment
//! grid.n1 = 32
//! grid.profile = SinProfile
//! ```
//!
//! Blank lines and lines starting with `#` are ignored, every key may appear
//! at most once, and unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use grushin_mfg::coupling::{BaseShape, Coupling, CouplingSpec};
use grushin_mfg::metric::TransportOptions;
use grushin_mfg::mfg::{MfgOptions, TimeMesh};
use grushin_mfg::{Profile, TorusGrid};
use sha2::{Digest, Sha256};

/// Every accepted key, in echo order.
pub const KEYS: [&str; 16] = [
    "grid.n1",
    "grid.n2",
    "grid.profile",
    "time.t0",
    "time.T",
    "time.nt",
    "coupling.sigma",
    "coupling.scale_f",
    "coupling.scale_g",
    "coupling.base",
    "solver.theta",
    "solver.tol",
    "solver.max_iter",
    "metric.lp_cap",
    "metric.sinkhorn_eps_final",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n1: usize,
    pub n2: usize,
    pub profile: Profile,
    pub t0: f64,
    pub t_end: f64,
    /// `None` selects `2 max(n1, n2)`.
    pub nt: Option<usize>,
    pub coupling: CouplingSpec,
    pub solver: MfgOptions,
    pub lp_cap: usize,
    pub sinkhorn_eps_final: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let transport = TransportOptions::default();
        RunConfig {
            n1: 32,
            n2: 32,
            profile: Profile::SinProfile,
            t0: 0.0,
            t_end: 1.0,
            nt: None,
            coupling: CouplingSpec::default(),
            solver: MfgOptions::default(),
            lp_cap: transport.lp_cap,
            sinkhorn_eps_final: transport.eps_final,
            seed: 42,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::new(key, format!("cannot parse `{value}`: {e}")))
}

impl RunConfig {
    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(ConfigError::new(key, "duplicate key"));
            }
            cfg.set_raw(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override and revalidates.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(assignment, "override must have the form key=value"))?;
        self.set_raw(key.trim(), value.trim())?;
        self.validate()
    }

    fn set_raw(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "grid.n1" => self.n1 = parse_value(key, value)?,
            "grid.n2" => self.n2 = parse_value(key, value)?,
            "grid.profile" => self.profile = parse_value(key, value)?,
            "time.t0" => self.t0 = parse_value(key, value)?,
            "time.T" => self.t_end = parse_value(key, value)?,
            "time.nt" => self.nt = Some(parse_value(key, value)?),
            "coupling.sigma" => self.coupling.sigma = parse_value(key, value)?,
            "coupling.scale_f" => self.coupling.scale_f = parse_value(key, value)?,
            "coupling.scale_g" => self.coupling.scale_g = parse_value(key, value)?,
            "coupling.base" => self.coupling.base = parse_value::<BaseShape>(key, value)?,
            "solver.theta" => self.solver.theta = parse_value(key, value)?,
            "solver.tol" => self.solver.tol = parse_value(key, value)?,
            "solver.max_iter" => self.solver.max_iter = parse_value(key, value)?,
            "metric.lp_cap" => self.lp_cap = parse_value(key, value)?,
            "metric.sinkhorn_eps_final" => self.sinkhorn_eps_final = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(ConfigError::new(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, n) in [("grid.n1", self.n1), ("grid.n2", self.n2)] {
            TorusGrid::new(n, n, self.profile).map_err(|e| ConfigError::new(key, e.to_string()))?;
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t0 < self.t_end) {
            return Err(ConfigError::new("time.T", format!("need t0 < T, got {} and {}", self.t0, self.t_end)));
        }
        TimeMesh::new(self.t0, self.t_end, self.nt()).map_err(|e| ConfigError::new("time.nt", e.to_string()))?;
        if let Err(e) = self.coupling.validate() {
            let msg = e.to_string();
            let key = ["coupling.sigma", "coupling.scale_f", "coupling.scale_g"]
                .into_iter()
                .find(|k| msg.contains(k))
                .unwrap_or("coupling.sigma");
            return Err(ConfigError::new(key, msg));
        }
        if !(self.solver.theta > 0.0 && self.solver.theta <= 1.0) {
            return Err(ConfigError::new("solver.theta", format!("{} outside (0, 1]", self.solver.theta)));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol.is_finite()) {
            return Err(ConfigError::new("solver.tol", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(ConfigError::new("solver.max_iter", "must be positive"));
        }
        if self.lp_cap == 0 {
            return Err(ConfigError::new("metric.lp_cap", "must be positive"));
        }
        if !(self.sinkhorn_eps_final > 0.0 && self.sinkhorn_eps_final.is_finite()) {
            return Err(ConfigError::new("metric.sinkhorn_eps_final", "must be positive"));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        self.nt.unwrap_or(2 * self.n1.max(self.n2))
    }

    /// Resolved values of every key, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.n1.to_string(),
            self.n2.to_string(),
            self.profile.name().to_string(),
            self.t0.to_string(),
            self.t_end.to_string(),
            self.nt().to_string(),
            self.coupling.sigma.to_string(),
            self.coupling.scale_f.to_string(),
            self.coupling.scale_g.to_string(),
            self.coupling.base.to_string(),
            self.solver.theta.to_string(),
            self.solver.tol.to_string(),
            self.solver.max_iter.to_string(),
            self.lp_cap.to_string(),
            self.sinkhorn_eps_final.to_string(),
            self.seed.to_string(),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn canonical(&self) -> String {
        self.echo().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn grid(&self) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(self.n1, self.n2, self.profile).expect("validated grid"))
    }

    pub fn mesh(&self) -> TimeMesh {
        TimeMesh::new(self.t0, self.t_end, self.nt()).expect("validated mesh")
    }

    pub fn coupling(&self, grid: &Arc<TorusGrid>) -> Coupling {
        Coupling::from_spec(grid, &self.coupling).expect("validated coupling")
    }

    pub fn transport(&self, base: TransportOptions) -> TransportOptions {
        TransportOptions {
            lp_cap: self.lp_cap,
            eps_final: self.sinkhorn_eps_final,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.nt(), 64);
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::parse("grid.n1 = 16\ngrid.profile = ChartGrushin\ncoupling.base = zero\n").unwrap();
        cfg.apply_override("solver.tol=1e-6").unwrap();
        let back = RunConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(back, RunConfig { nt: Some(cfg.nt()), ..cfg.clone() });
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_depends_on_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.apply_override("seed=7").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(RunConfig::parse("grid.n3 = 4").unwrap_err().key, "grid.n3");
        assert_eq!(RunConfig::parse("solver.theta = 2").unwrap_err().key, "solver.theta");
        assert_eq!(RunConfig::parse("grid.n1 = many").unwrap_err().key, "grid.n1");
        assert_eq!(RunConfig::parse("seed = 1\nseed = 2").unwrap_err().key, "seed");
        assert_eq!(RunConfig::parse("coupling.sigma = 3").unwrap_err().key, "coupling.sigma");
        assert_eq!(RunConfig::parse("time.T = -1").unwrap_err().key, "time.T");
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.apply_override("grid.profile").unwrap_err().key, "grid.profile");
        assert_eq!(cfg.apply_override("grid.n2=4").unwrap_err().key, "grid.n2");
    }
}
