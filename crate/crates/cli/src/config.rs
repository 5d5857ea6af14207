//! Flat `key = value` run configuration.
//!
//! Sources are applied in order: built-in defaults, the config file,
//! `FANOVA_<KEY>` environment variables, then command-line flags. Lines
//! starting with `#` are comments; keys starting with `manifest.` are
//! ignored so a run manifest can be fed back as a config file. The
//! `component` key may repeat; every other key keeps its last value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use fanova_core::{CalibrationMode, DimensionSpec, Engine, EnumerationMode, EpsHatRule, Regime, TruncationMode};

/// Invalid or unreadable configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

/// Every recognised key, in manifest order.
pub const KEYS: &[&str] = &[
    "experiment",
    "d",
    "s",
    "beta",
    "sigma",
    "epsilon",
    "m",
    "j",
    "alpha",
    "alphas",
    "mode",
    "pool_size",
    "truncation",
    "calibration",
    "eps_hat",
    "engine",
    "pattern",
    "component",
    "coefficients",
    "seed",
    "out",
    "threads",
    "audit_t",
    "audit_trials",
    "audit_draws",
    "audit_k",
    "audit_m",
    "boundary_betas",
    "boundary_sigmas",
    "boundary_ds",
    "boundary_ks",
    "boundary_count",
    "boundary_max_ratio",
    "boundary_radii",
    "band",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("experiment", "default"),
    ("d", "50"),
    ("s", "4"),
    ("beta", "0.87"),
    ("sigma", "1"),
    ("epsilon", "5e-5"),
    ("m", "20"),
    ("j", "15"),
    ("alpha", "1"),
    ("alphas", "0.0001, 0.0005, 0.0009, 0.001, 0.0011, 0.0012, 0.005, 0.5, 1"),
    ("mode", "pool"),
    ("pool_size", "2000"),
    ("truncation", "rule"),
    ("calibration", "exact"),
    ("eps_hat", "fixed"),
    ("engine", "shell"),
    ("pattern", "paper_default"),
    ("seed", "20240601"),
    ("out", "out"),
    ("threads", "0"),
    ("audit_t", "3"),
    ("audit_trials", "1000000"),
    ("audit_draws", "100000"),
    ("audit_k", "1"),
    ("boundary_betas", "0.1, 0.3, 0.5, 0.7, 0.87, 0.95"),
    ("boundary_sigmas", "1"),
    ("boundary_ks", "1, 2"),
    ("boundary_count", "40"),
    ("boundary_max_ratio", "3"),
    ("band", "0.05"),
];

/// Raw key/value store with source precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    components: Vec<String>,
}

impl RawConfig {
    pub fn with_defaults() -> Self {
        let mut raw = RawConfig::default();
        for (k, v) in DEFAULTS {
            raw.values.insert(k.to_string(), v.to_string());
        }
        raw
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key.starts_with("manifest.") {
            return Ok(());
        }
        if !KEYS.contains(&key) {
            return bad(format!("unknown config key `{key}`"));
        }
        let value = value.trim().to_string();
        if key == "component" {
            self.components.push(value);
        } else {
            self.values.insert(key.to_string(), value);
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return bad(format!("{origin}:{}: expected `key = value`, got `{line}`", no + 1));
            };
            self.set(k, v)
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `FANOVA_<KEY>` variables (key upper-cased).
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix("FANOVA_") else {
                continue;
            };
            let key = rest.to_ascii_lowercase();
            // flag-only variables handled by the argument parser
            if matches!(key.as_str(), "config" | "quiet") {
                continue;
            }
            self.set(&key, &value)
                .map_err(|e| ConfigError(format!("environment {name}: {e}")))?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str()).filter(|s| !s.is_empty())
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("missing value for `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.req(key)?;
        v.parse()
            .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{v}`")))
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|x| x.trim())
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.parse()
                        .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{x}`")))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternChoice {
    PaperDefault,
    Explicit,
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: String,
    pub ds: Vec<u32>,
    pub s: u32,
    pub beta: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub m: usize,
    pub j: u32,
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub mode: EnumerationMode,
    pub truncation: TruncationMode,
    pub calibration: CalibrationMode,
    pub eps_hat: EpsHatRule,
    pub engine: Engine,
    pub pattern: PatternChoice,
    pub components: Vec<String>,
    pub coefficients: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub audit_t: f64,
    pub audit_trials: u64,
    pub audit_draws: u64,
    pub audit_k: u32,
    pub audit_m: Option<usize>,
    pub boundary_betas: Vec<f64>,
    pub boundary_sigmas: Vec<f64>,
    pub boundary_ds: Vec<u32>,
    pub boundary_ks: Vec<u32>,
    pub boundary_count: usize,
    pub boundary_max_ratio: f64,
    pub boundary_radii: Vec<f64>,
    pub band: f64,
    raw: RawConfig,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let ds: Vec<u32> = raw.list("d")?;
        if ds.is_empty() {
            return bad("`d` needs at least one value");
        }
        let pool_size: u64 = raw.parse("pool_size")?;
        let mode = match raw.req("mode")? {
            "full" => EnumerationMode::Full,
            "pool" => EnumerationMode::Pool {
                inactive_per_k: pool_size,
            },
            other => return bad(format!("`mode` must be full or pool, got `{other}`")),
        };
        let truncation = match raw.req("truncation")? {
            "rule" => TruncationMode::Rule,
            "paper_preset" => TruncationMode::PaperPreset,
            other => return bad(format!("`truncation` must be rule or paper_preset, got `{other}`")),
        };
        let calibration = match raw.req("calibration")? {
            "exact" => CalibrationMode::Exact,
            "asymptotic_fixed_k" => CalibrationMode::Asymptotic(Regime::FixedK),
            "asymptotic_growing_k" => CalibrationMode::Asymptotic(Regime::GrowingK),
            other => {
                return bad(format!(
                    "`calibration` must be exact, asymptotic_fixed_k or asymptotic_growing_k, got `{other}`"
                ))
            }
        };
        let eps_hat = match raw.req("eps_hat")? {
            "fixed" => EpsHatRule::Fixed,
            "growing_s" => EpsHatRule::GrowingS,
            other => return bad(format!("`eps_hat` must be fixed or growing_s, got `{other}`")),
        };
        let engine = match raw.req("engine")? {
            "shell" => Engine::Shell,
            "coordinate" => Engine::Coordinate,
            other => return bad(format!("`engine` must be shell or coordinate, got `{other}`")),
        };
        let pattern = match raw.req("pattern")? {
            "paper_default" => PatternChoice::PaperDefault,
            "explicit" => PatternChoice::Explicit,
            other => return bad(format!("`pattern` must be paper_default or explicit, got `{other}`")),
        };
        let cfg = RunConfig {
            experiment: raw.req("experiment")?.to_string(),
            s: raw.parse("s")?,
            beta: raw.parse("beta")?,
            sigma: raw.parse("sigma")?,
            epsilon: raw.parse("epsilon")?,
            m: raw.parse("m")?,
            j: raw.parse("j")?,
            alpha: raw.parse("alpha")?,
            alphas: raw.list("alphas")?,
            mode,
            truncation,
            calibration,
            eps_hat,
            engine,
            pattern,
            components: raw.components.clone(),
            coefficients: raw.get("coefficients").map(PathBuf::from),
            seed: raw.parse("seed")?,
            out: PathBuf::from(raw.req("out")?),
            threads: raw.parse("threads")?,
            audit_t: raw.parse("audit_t")?,
            audit_trials: raw.parse("audit_trials")?,
            audit_draws: raw.parse("audit_draws")?,
            audit_k: raw.parse("audit_k")?,
            audit_m: raw.opt("audit_m")?,
            boundary_betas: raw.list("boundary_betas")?,
            boundary_sigmas: raw.list("boundary_sigmas")?,
            boundary_ds: {
                let b: Vec<u32> = raw.list("boundary_ds")?;
                if b.is_empty() {
                    ds.clone()
                } else {
                    b
                }
            },
            ds,
            boundary_ks: raw.list("boundary_ks")?,
            boundary_count: raw.parse("boundary_count")?,
            boundary_max_ratio: raw.parse("boundary_max_ratio")?,
            boundary_radii: raw.list("boundary_radii")?,
            band: raw.parse("band")?,
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for &d in &self.ds {
            DimensionSpec::new(d, self.s.min(d), self.beta, self.sigma, self.epsilon)
                .map_err(|e| ConfigError(e.to_string()))?;
            if self.s > d {
                return bad(format!("s = {} exceeds d = {d}", self.s));
            }
        }
        if self.j < 1 {
            return bad("`j` must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("`alpha` must lie in (0, 1], got {}", self.alpha));
        }
        if let Some(a) = self.alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return bad(format!("`alphas` entries must lie in (0, 1], got {a}"));
        }
        if !(self.band >= 0.0) {
            return bad("`band` must be nonnegative");
        }
        if self.audit_k < 1 || self.audit_k > self.s {
            return bad(format!("`audit_k` must lie in 1..={}", self.s));
        }
        if let Some(m) = self.audit_m {
            if m >= self.m {
                return bad(format!("`audit_m` is a 0-based grid index below m = {}", self.m));
            }
        }
        if self.pattern == PatternChoice::PaperDefault && (!self.components.is_empty() || self.coefficients.is_some()) {
            return bad("`component`/`coefficients` need `pattern = explicit`");
        }
        Ok(())
    }

    /// The single dimension used by every command but `table1`.
    pub fn d(&self) -> Result<u32> {
        match self.ds.as_slice() {
            [d] => Ok(*d),
            _ => bad(format!("this command needs a single `d`, got {:?}", self.ds)),
        }
    }

    pub fn dim(&self) -> Result<DimensionSpec> {
        DimensionSpec::new(self.d()?, self.s, self.beta, self.sigma, self.epsilon).map_err(|e| ConfigError(e.to_string()))
    }

    /// Resolved configuration as `key = value` lines, in [`KEYS`] order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if *key == "component" {
                for c in &self.raw.components {
                    let _ = writeln!(out, "component = {c}");
                }
            } else if let Some(v) = self.raw.values.get(*key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = RunConfig::from_raw(RawConfig::with_defaults()).unwrap();
        assert_eq!(cfg.ds, vec![50]);
        assert_eq!(cfg.alphas.len(), 9);
        assert_eq!(cfg.mode, EnumerationMode::Pool { inactive_per_k: 2000 });
    }

    #[test]
    fn file_then_env_precedence() {
        let mut raw = RawConfig::with_defaults();
        raw.apply_text("# comment\nd = 20\nseed=5\n", "t").unwrap();
        raw.apply_env(vec![("FANOVA_SEED".into(), "9".into()), ("HOME".into(), "/x".into())]).unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.ds, vec![20]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut raw = RawConfig::with_defaults();
        assert!(raw.apply_text("bogus = 1", "t").is_err());
        assert!(raw.apply_text("d 50", "t").is_err());
        let mut raw = RawConfig::with_defaults();
        raw.apply_text("beta = 1.5", "t").unwrap();
        assert!(RunConfig::from_raw(raw).is_err());
        let mut raw = RawConfig::with_defaults();
        raw.apply_text("mode = sometimes", "t").unwrap();
        assert!(RunConfig::from_raw(raw).is_err());
    }

    #[test]
    fn echo_reloads_to_the_same_config() {
        let mut raw = RawConfig::with_defaults();
        raw.apply_text("pattern = explicit\ncomponent = 1 : 1\ncomponent = 2 3 : 2 3 @ 0.5\nd = 10, 12", "t")
            .unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        let mut again = RawConfig::default();
        again.apply_text(&format!("manifest.version = x\n{}", cfg.echo()), "echo").unwrap();
        let cfg2 = RunConfig::from_raw(again).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn multi_d_only_for_table1() {
        let mut raw = RawConfig::with_defaults();
        raw.apply_text("d = 50, 100", "t").unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert!(cfg.d().is_err());
    }
}
