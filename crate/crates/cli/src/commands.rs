use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Result};
use fanova_core::extremal::{a_asymp, a_exact};
use fanova_core::lattice::{active_count, log_binomial};
use fanova_core::risk_lab::{attenuation_experiment, attenuation_target, boundary_sweep, estimate_risk, RadiusGrid, SweepGrid};
use fanova_core::selector::{null_moments, tail_bound_audit};
use fanova_core::signal_bank::{build_pattern, PatternMode};
use fanova_core::{
    CalibrationMode, CoefficientTable, ComponentSpec, DimensionSpec, FrequencyIndex, RiskReport, SelectorConfig,
    SelectorOptions, SparsityPattern, Subset,
};

use crate::config::{ConfigError, PatternChoice, RunConfig};
use crate::output::{fmt_f, fmt_list, Table};

/// Null-mean tolerance reported by `audit`.
const NULL_MEAN_TOL: f64 = 0.02;
/// Null-variance tolerance reported by `audit`.
const NULL_VAR_TOL: f64 = 0.05;
/// Relative tolerance on `Σω² = 1/2`.
const NORMALIZATION_TOL: f64 = 1e-10;

pub fn selector_config(cfg: &RunConfig) -> Result<SelectorConfig> {
    let opts = SelectorOptions {
        m: cfg.m,
        calibration: cfg.calibration,
        eps_hat_rule: cfg.eps_hat,
        truncation: cfg.truncation,
    };
    Ok(SelectorConfig::build(cfg.dim()?, opts)?)
}

/// Parses `i j ... : f_i f_j ... [@ amplitude]`; factors may carry a `g` prefix.
pub fn parse_component(text: &str, d: u32) -> Result<ComponentSpec> {
    let cerr = |msg: String| anyhow!(ConfigError(msg));
    let (body, amp) = match text.split_once('@') {
        Some((b, a)) => {
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| cerr(format!("component `{text}`: bad amplitude")))?;
            (b, a)
        }
        None => (text, 1.0),
    };
    let (idx, fac) = body
        .split_once(':')
        .ok_or_else(|| cerr(format!("component `{text}`: expected `indices : factors`")))?;
    let indices = idx
        .split_whitespace()
        .map(|t| t.parse::<u32>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| cerr(format!("component `{text}`: bad index")))?;
    let factors = fac
        .split_whitespace()
        .map(|t| t.trim_start_matches('g').parse::<u8>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| cerr(format!("component `{text}`: bad factor")))?;
    let subset = Subset::new(indices, d).map_err(|e| cerr(format!("component `{text}`: {e}")))?;
    let spec = ComponentSpec::new(subset, factors).map_err(|e| cerr(format!("component `{text}`: {e}")))?;
    Ok(spec.with_amplitude(amp))
}

/// Reads `subset;l_1 ... l_k;θ` records, one table per subset.
pub fn read_coefficients(path: &Path, d: u32) -> Result<Vec<ComponentSpec>> {
    let text = fs::read_to_string(path)
        .map_err(|e| anyhow!(ConfigError(format!("cannot read coefficients {}: {e}", path.display()))))?;
    let mut tables: BTreeMap<Vec<u32>, CoefficientTable> = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: &str| anyhow!(ConfigError(format!("{}:{}: {msg}", path.display(), no + 1)));
        let parts: Vec<&str> = line.split(';').collect();
        let [owner, coords, theta] = parts.as_slice() else {
            return Err(at("expected `subset;l_1 ... l_k;theta`"));
        };
        let owner: Vec<u32> = owner
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| at("bad subset"))?;
        let coords: Vec<i32> = coords
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| at("bad frequency"))?;
        let theta: f64 = theta.trim().parse().map_err(|_| at("bad coefficient"))?;
        if !tables.contains_key(&owner) {
            let subset = Subset::new(owner.clone(), d).map_err(|e| at(&e.to_string()))?;
            tables.insert(owner.clone(), CoefficientTable::new(subset));
        }
        let table = tables.get_mut(&owner).expect("inserted above");
        let l = FrequencyIndex::for_subset(coords, &table.owner).map_err(|e| at(&e.to_string()))?;
        table.insert(l, theta).map_err(|e| at(&e.to_string()))?;
    }
    tables
        .into_values()
        .map(|t| ComponentSpec::from_table(t).map_err(|e| anyhow!(ConfigError(e.to_string()))))
        .collect()
}

pub fn pattern(cfg: &RunConfig) -> Result<SparsityPattern> {
    let dim = cfg.dim()?;
    let mode = match cfg.pattern {
        PatternChoice::PaperDefault => PatternMode::PaperDefault,
        PatternChoice::Explicit => {
            let mut list = cfg
                .components
                .iter()
                .map(|c| parse_component(c, dim.d))
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = &cfg.coefficients {
                list.extend(read_coefficients(p, dim.d)?);
            }
            PatternMode::Explicit(list)
        }
    };
    build_pattern(&dim, mode).map_err(|e| anyhow!(ConfigError(e.to_string())))
}

pub fn table1(cfg: &RunConfig) -> Result<Table> {
    let mut t = Table::new(["d", "k", "beta", "c_pow", "n_active", "n_pattern"]);
    for &d in &cfg.ds {
        let dim = DimensionSpec::new(d, cfg.s, cfg.beta, cfg.sigma, cfg.epsilon)?;
        let built = build_pattern(&dim, PatternMode::PaperDefault).ok();
        for k in 1..=cfg.s {
            let c_pow = ((1.0 - cfg.beta) * log_binomial(d as u64, k as u64)?).exp();
            let n_pattern = built.as_ref().map_or(String::new(), |p| p.actives(k).len().to_string());
            t.push(vec![
                d.to_string(),
                k.to_string(),
                fmt_f(cfg.beta),
                fmt_f(c_pow),
                active_count(d, k, cfg.beta)?.to_string(),
                n_pattern,
            ]);
        }
    }
    Ok(t)
}

pub fn calibrate(cfg: &RunConfig) -> Result<Table> {
    let sc = selector_config(cfg)?;
    let dim = sc.dim;
    let mut t = Table::new([
        "k",
        "m",
        "beta_m",
        "target",
        "r_star",
        "a_exact",
        "rel_residual",
        "threshold",
        "eps_hat",
        "support_points",
        "support_radius",
        "max_weight",
        "truncation_n",
    ]);
    for order in &sc.grid.orders {
        let k = order.k;
        for (m, (&target, &r)) in order.targets.iter().zip(&order.r_stars).enumerate() {
            let a = a_exact(r, k as usize, dim.sigma, dim.epsilon)?;
            let solved = match sc.grid.mode {
                CalibrationMode::Exact => a,
                CalibrationMode::Asymptotic(regime) => a_asymp(r, k as usize, dim.sigma, dim.epsilon, regime)?,
            };
            let w = &sc.profiles(k)[m];
            t.push(vec![
                k.to_string(),
                m.to_string(),
                fmt_f(sc.grid.betas[m]),
                fmt_f(target),
                fmt_f(r),
                fmt_f(a),
                fmt_f((solved - target).abs() / target),
                fmt_f(sc.threshold(k)),
                fmt_f(order.eps_hat),
                w.support_len().to_string(),
                fmt_f(w.support_radius),
                fmt_f(w.max_weight()),
                sc.truncation(k).to_string(),
            ]);
        }
    }
    Ok(t)
}

fn report_table(s: u32) -> Table {
    let mut header: Vec<String> = ["alpha", "err", "std_error", "j", "mode", "engine", "d", "s", "m", "seed", "losses"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    for k in 1..=s {
        header.extend([
            format!("evaluated_{k}"),
            format!("fp_{k}"),
            format!("fn_{k}"),
            format!("fp_extrapolated_{k}"),
        ]);
    }
    Table::new(header)
}

fn report_row(r: &RiskReport) -> Vec<String> {
    let mut row = vec![
        fmt_f(r.alpha),
        fmt_f(r.err),
        fmt_f(r.std_error()),
        r.j.to_string(),
        r.mode.to_string(),
        format!("{:?}", r.engine).to_lowercase(),
        r.dim.d.to_string(),
        r.dim.s.to_string(),
        r.m.to_string(),
        r.seed.to_string(),
        fmt_list(&r.per_cycle_losses),
    ];
    for i in 0..r.dim.s as usize {
        row.extend([
            r.evaluated[i].to_string(),
            fmt_f(r.false_positives[i]),
            fmt_f(r.false_negatives[i]),
            fmt_f(r.extrapolated_false_positives[i]),
        ]);
    }
    row
}

pub fn risk(cfg: &RunConfig) -> Result<Table> {
    let sc = selector_config(cfg)?;
    let mut pat = pattern(cfg)?;
    if cfg.alpha != 1.0 {
        let target = attenuation_target(&pat)?;
        pat = pat.attenuated(&target, cfg.alpha)?;
    }
    let mut rep = estimate_risk(&pat, &sc, cfg.j, cfg.seed, cfg.mode, cfg.engine)?;
    rep.alpha = cfg.alpha;
    let mut t = report_table(pat.s);
    t.push(report_row(&rep));
    Ok(t)
}

pub fn table2(cfg: &RunConfig) -> Result<Table> {
    if cfg.alphas.is_empty() {
        return Err(anyhow!(ConfigError("`alphas` is empty".into())));
    }
    let sc = selector_config(cfg)?;
    let pat = pattern(cfg)?;
    let reports = attenuation_experiment(&cfg.alphas, &pat, &sc, cfg.j, cfg.seed, cfg.mode, cfg.engine)?;
    let mut t = report_table(pat.s);
    for r in &reports {
        t.push(report_row(r));
    }
    Ok(t)
}

pub fn boundary(cfg: &RunConfig) -> Result<Table> {
    let radii = if cfg.boundary_radii.is_empty() {
        RadiusGrid::Ratios {
            count: cfg.boundary_count,
            max_ratio: cfg.boundary_max_ratio,
        }
    } else {
        RadiusGrid::Explicit(cfg.boundary_radii.clone())
    };
    let grid = SweepGrid {
        betas: cfg.boundary_betas.clone(),
        sigmas: cfg.boundary_sigmas.clone(),
        ds: cfg.boundary_ds.clone(),
        ks: cfg.boundary_ks.clone(),
        radii,
        epsilon: cfg.epsilon,
        band: cfg.band,
    };
    let rows = boundary_sweep(&grid)?;
    let mut t = Table::new(["beta", "sigma", "d", "k", "r", "ratio", "verdict"]);
    for r in rows {
        t.push(vec![
            fmt_f(r.beta),
            fmt_f(r.sigma),
            r.d.to_string(),
            r.k.to_string(),
            fmt_f(r.r),
            fmt_f(r.ratio),
            r.verdict.to_string(),
        ]);
    }
    Ok(t)
}

pub fn audit(cfg: &RunConfig) -> Result<Table> {
    let sc = selector_config(cfg)?;
    let mut t = Table::new(["check", "k", "m", "value", "reference", "tolerance", "pass"]);
    for k in 1..=sc.dim.s {
        for (m, w) in sc.profiles(k).iter().enumerate() {
            let v = w.sum_sq();
            let dev = (v - 0.5).abs() / 0.5;
            t.push(vec![
                "sum_sq_weights".into(),
                k.to_string(),
                m.to_string(),
                fmt_f(v),
                fmt_f(0.5),
                fmt_f(NORMALIZATION_TOL),
                (dev <= NORMALIZATION_TOL).to_string(),
            ]);
        }
    }
    let k = cfg.audit_k;
    let profiles = sc.profiles(k);
    let Some(m) = cfg.audit_m.or_else(|| (!profiles.is_empty()).then_some(profiles.len() / 2)) else {
        return Ok(t);
    };
    let w = &profiles[m];
    let (mean, var) = null_moments(w, cfg.audit_draws, cfg.seed)?;
    let tail = tail_bound_audit(cfg.audit_t, cfg.audit_trials, cfg.seed, w, None)?;
    let bound = (-0.4 * cfg.audit_t * cfg.audit_t).exp();
    let mut push = |check: &str, value: f64, reference: f64, tol: Option<f64>, pass: Option<bool>| {
        t.push(vec![
            check.into(),
            k.to_string(),
            m.to_string(),
            fmt_f(value),
            fmt_f(reference),
            tol.map_or(String::new(), fmt_f),
            pass.map_or(String::new(), |p| p.to_string()),
        ]);
    };
    push("null_mean", mean, 0.0, Some(NULL_MEAN_TOL), Some(mean.abs() <= NULL_MEAN_TOL));
    push("null_variance", var, 1.0, Some(NULL_VAR_TOL), Some((var - 1.0).abs() <= NULL_VAR_TOL));
    push("tail_exceedance", tail.exceedance, bound, None, Some(tail.exceedance <= bound));
    push("tail_reference", tail.reference, tail.reference, None, None);
    push("regime_product", tail.regime_product, 0.1, None, Some(!tail.regime_warning));
    Ok(t)
}

