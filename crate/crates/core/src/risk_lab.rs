//! Monte Carlo Hamming risk, the attenuation experiment and phase-boundary
//! classification.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::extremal::{a_exact, admissible_radius, solve_r_star, CalibrationMode};
use crate::lattice::{binomial, log_binomial, sample_subsets, DimensionSpec, LexSubsets, Subset};
use crate::selector::{Engine, SelectionResult, SelectorConfig, Simulator, SubsetDecision};
use crate::signal_bank::SparsityPattern;

/// Default number of sampled inactive subsets per order in pool mode.
pub const DEFAULT_POOL_SIZE: u64 = 2000;

/// Upper limit on the number of subsets visited per cycle in full mode.
pub const FULL_ENUMERATION_CAP: u64 = 5_000_000;

/// Default tolerance band on the ratio scale.
pub const DEFAULT_BAND: f64 = 0.05;

/// Which subsets are evaluated in each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationMode {
    /// Every subset of every order.
    Full,
    /// All active subsets plus `inactive_per_k` sampled inactive ones per order
    /// (fewer when the order has fewer inactive subsets).
    Pool { inactive_per_k: u64 },
}

impl fmt::Display for EnumerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnumerationMode::Full => write!(f, "full"),
            EnumerationMode::Pool { inactive_per_k } => write!(f, "pool({inactive_per_k})"),
        }
    }
}

/// Subsets evaluated per order. The pool sample is drawn once from `seed` and
/// reused in every cycle.
pub fn universe(pattern: &SparsityPattern, mode: EnumerationMode, seed: u64) -> Result<Vec<Vec<Subset>>> {
    let d = pattern.d;
    let mut out = Vec::new();
    match mode {
        EnumerationMode::Full => {
            let total: u128 = (1..=pattern.s).map(|k| binomial(d as u64, k as u64).unwrap_or(u128::MAX)).sum();
            if total > FULL_ENUMERATION_CAP as u128 {
                return Err(Error::Capacity {
                    what: "full subset enumeration",
                    needed: total.min(u64::MAX as u128) as u64,
                    cap: FULL_ENUMERATION_CAP,
                });
            }
            for k in 1..=pattern.s {
                out.push(LexSubsets::new(d, k).collect());
            }
        }
        EnumerationMode::Pool { inactive_per_k } => {
            for k in 1..=pattern.s {
                let actives = pattern.active_subsets(k);
                let available = binomial(d as u64, k as u64).unwrap_or(u128::MAX) - actives.len() as u128;
                let size = (inactive_per_k as u128).min(available) as u64;
                let mut all: Vec<Subset> = actives.iter().cloned().collect();
                all.extend(sample_subsets(d, k, size, seed, &actives)?);
                all.sort();
                out.push(all);
            }
        }
    }
    Ok(out)
}

/// `Σ |η̂_u − η_u|` over the evaluated subsets.
///
/// Every active subset of `truth` must have been evaluated.
pub fn hamming_loss(estimate: &SelectionResult, truth: &SparsityPattern) -> Result<u64> {
    let mut seen_active = 0usize;
    let mut loss = 0u64;
    for dcs in &estimate.decisions {
        let u = &dcs.subset;
        if u.k() > truth.s as usize || u.indices().last().copied().unwrap_or(0) > truth.d {
            return domain(format!("subset {u} lies outside the pattern (d = {}, s = {})", truth.d, truth.s));
        }
        let eta = truth.eta(u);
        seen_active += eta as usize;
        loss += (dcs.selected != eta) as u64;
    }
    if seen_active != truth.total_active() {
        return domain(format!(
            "estimate covers {seen_active} of the {} active subsets",
            truth.total_active()
        ));
    }
    Ok(loss)
}

/// Result of `J` simulate, select, score cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub err: f64,
    pub per_cycle_losses: Vec<u64>,
    pub j: u32,
    pub alpha: f64,
    pub seed: u64,
    pub mode: EnumerationMode,
    pub engine: Engine,
    pub dim: DimensionSpec,
    pub m: usize,
    /// Subsets evaluated per order.
    pub evaluated: Vec<u64>,
    /// Mean false positives per cycle, per order.
    pub false_positives: Vec<f64>,
    /// Mean false negatives per cycle, per order.
    pub false_negatives: Vec<f64>,
    /// Pool false-positive rate times the number of inactive subsets, per
    /// order; equals `false_positives` in full mode.
    pub extrapolated_false_positives: Vec<f64>,
}

impl RiskReport {
    /// Standard error of `err`.
    pub fn std_error(&self) -> f64 {
        let n = self.per_cycle_losses.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let var = self
            .per_cycle_losses
            .iter()
            .map(|&l| (l as f64 - self.err).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

struct Tally {
    losses: Vec<u64>,
    fp: Vec<u64>,
    fneg: Vec<u64>,
}

impl Tally {
    fn new(s: usize) -> Self {
        Tally {
            losses: Vec::new(),
            fp: vec![0; s],
            fneg: vec![0; s],
        }
    }

    fn add<'a, I: IntoIterator<Item = &'a SubsetDecision>>(&mut self, decisions: I, truth: &SparsityPattern) -> u64 {
        let mut loss = 0;
        for d in decisions {
            let eta = truth.eta(&d.subset);
            if d.selected != eta {
                loss += 1;
                let k = d.subset.k() - 1;
                if eta {
                    self.fneg[k] += 1;
                } else {
                    self.fp[k] += 1;
                }
            }
        }
        loss
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        self,
        pattern: &SparsityPattern,
        config: &SelectorConfig,
        universe: &[Vec<Subset>],
        alpha: f64,
        seed: u64,
        mode: EnumerationMode,
        engine: Engine,
    ) -> RiskReport {
        let j = self.losses.len() as u32;
        let jf = j as f64;
        let err = self.losses.iter().sum::<u64>() as f64 / jf;
        let false_positives: Vec<f64> = self.fp.iter().map(|&x| x as f64 / jf).collect();
        let extrapolated = (1..=pattern.s)
            .map(|k| {
                let idx = k as usize - 1;
                let n_active = pattern.actives(k).len() as f64;
                let evaluated_inactive = universe[idx].len() as f64 - n_active;
                let inactive_total = binomial(pattern.d as u64, k as u64).map_or(f64::INFINITY, |c| c as f64) - n_active;
                if evaluated_inactive <= 0.0 {
                    0.0
                } else {
                    false_positives[idx] / evaluated_inactive * inactive_total
                }
            })
            .collect();
        RiskReport {
            err,
            per_cycle_losses: self.losses,
            j,
            alpha,
            seed,
            mode,
            engine,
            dim: config.dim,
            m: config.grid.m,
            evaluated: universe.iter().map(|u| u.len() as u64).collect(),
            false_positives,
            false_negatives: self.fneg.iter().map(|&x| x as f64 / jf).collect(),
            extrapolated_false_positives: extrapolated,
        }
    }
}

/// Hamming risk over `j` independent cycles.
pub fn estimate_risk(
    pattern: &SparsityPattern,
    config: &SelectorConfig,
    j: u32,
    seed: u64,
    mode: EnumerationMode,
    engine: Engine,
) -> Result<RiskReport> {
    if j < 1 {
        return domain("estimate_risk: need J >= 1");
    }
    let sim = Simulator::new(pattern, config)?;
    let uni = universe(pattern, mode, seed)?;
    let flat: Vec<Subset> = uni.iter().flatten().cloned().collect();
    let results = (0..j as u64)
        .into_par_iter()
        .map(|cycle| sim.evaluate(&flat, seed, cycle, engine))
        .collect::<Result<Vec<_>>>()?;
    let mut tally = Tally::new(pattern.s as usize);
    for res in &results {
        let loss = tally.add(&res.decisions, pattern);
        tally.losses.push(loss);
    }
    Ok(tally.report(pattern, config, &uni, 1.0, seed, mode, engine))
}

/// The component whose amplitude the attenuation experiment varies: the first
/// active main effect.
pub fn attenuation_target(pattern: &SparsityPattern) -> Result<Subset> {
    pattern
        .actives(1)
        .first()
        .map(|c| c.subset.clone())
        .ok_or_else(|| Error::Domain("attenuation needs an active order-1 component".into()))
}

/// One risk report per `alpha`, scaling only the attenuation target.
///
/// Each report equals `estimate_risk` on `pattern.attenuated(target, alpha)`
/// with the same seed; the other subsets are simulated once and shared.
pub fn attenuation_experiment(
    alphas: &[f64],
    pattern: &SparsityPattern,
    config: &SelectorConfig,
    j: u32,
    seed: u64,
    mode: EnumerationMode,
    engine: Engine,
) -> Result<Vec<RiskReport>> {
    if j < 1 {
        return domain("attenuation_experiment: need J >= 1");
    }
    if let Some(a) = alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        return domain(format!("attenuation factors must lie in (0, 1], got {a}"));
    }
    let target = attenuation_target(pattern)?;
    let base_amplitude = pattern.component(&target).map(|c| c.amplitude).unwrap_or(1.0);
    let sim = Simulator::new(pattern, config)?;
    let uni = universe(pattern, mode, seed)?;
    let others: Vec<Subset> = uni.iter().flatten().filter(|u| **u != target).cloned().collect();
    let threshold = config.threshold(1);

    let cycles = (0..j as u64)
        .into_par_iter()
        .map(|cycle| -> Result<(SelectionResult, Vec<bool>)> {
            let rest = sim.evaluate(&others, seed, cycle, engine)?;
            let hits = alphas
                .iter()
                .map(|&a| {
                    let stats = sim.statistics_with_amplitude(&target, seed, cycle, engine, Some(base_amplitude * a))?;
                    Ok(stats.iter().any(|&s| s > threshold))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((rest, hits))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let mut tally = Tally::new(pattern.s as usize);
        for (rest, hits) in &cycles {
            let mut loss = tally.add(&rest.decisions, pattern);
            if !hits[i] {
                loss += 1;
                tally.fneg[0] += 1;
            }
            tally.losses.push(loss);
        }
        reports.push(tally.report(pattern, config, &uni, alpha, seed, mode, engine));
    }
    Ok(reports)
}

/// `√2 (1 + √(1 − β))`.
pub fn selection_threshold(beta: f64) -> f64 {
    std::f64::consts::SQRT_2 * (1.0 + (1.0 - beta).sqrt())
}

/// `√2`.
pub fn detection_threshold() -> f64 {
    std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Selectable,
    DetectableOnly,
    Undetectable,
    Boundary,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Selectable => "selectable",
            Verdict::DetectableOnly => "detectable_only",
            Verdict::Undetectable => "undetectable",
            Verdict::Boundary => "boundary",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeVerdict {
    pub ratio: f64,
    pub selection_threshold: f64,
    pub detection_threshold: f64,
    pub band: f64,
    pub verdict: Verdict,
}

/// Verdict for a ratio at sparsity `beta`.
pub fn verdict_for(ratio: f64, beta: f64, band: f64) -> RegimeVerdict {
    let sel = selection_threshold(beta);
    let det = detection_threshold();
    let verdict = if ratio > sel + band {
        Verdict::Selectable
    } else if ratio > det + band && ratio < sel - band {
        Verdict::DetectableOnly
    } else if ratio < det - band {
        Verdict::Undetectable
    } else {
        Verdict::Boundary
    };
    RegimeVerdict {
        ratio,
        selection_threshold: sel,
        detection_threshold: det,
        band,
        verdict,
    }
}

/// `a(r_k) / √log C(d,k)` for one order.
pub fn boundary_ratio(r: f64, k: u32, dim: &DimensionSpec) -> Result<f64> {
    let lc = log_binomial(dim.d as u64, k as u64)?;
    if !(lc > 0.0) {
        return domain(format!("log C({}, {k}) is not positive", dim.d));
    }
    Ok(a_exact(r, k as usize, dim.sigma, dim.epsilon)? / lc.sqrt())
}

/// Classifies radii `radii[k - 1]`, `k = 1..=s`, against the boundaries.
pub fn classify_regime(radii: &[f64], dim: &DimensionSpec, band: f64) -> Result<RegimeVerdict> {
    dim.validate()?;
    if radii.len() != dim.s as usize {
        return domain(format!("need one radius per order 1..={}, got {}", dim.s, radii.len()));
    }
    if !(band >= 0.0) {
        return domain(format!("tolerance band must be nonnegative, got {band}"));
    }
    let mut ratio = f64::INFINITY;
    for (i, &r) in radii.iter().enumerate() {
        ratio = ratio.min(boundary_ratio(r, i as u32 + 1, dim)?);
    }
    Ok(verdict_for(ratio, dim.beta, band))
}

/// Radii per sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusGrid {
    Explicit(Vec<f64>),
    /// `count` radii whose ratios are spread evenly over `(0, max_ratio]`;
    /// ratios beyond the admissible range are dropped.
    Ratios { count: usize, max_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub betas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub ds: Vec<u32>,
    pub ks: Vec<u32>,
    pub radii: RadiusGrid,
    pub epsilon: f64,
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub sigma: f64,
    pub d: u32,
    pub k: u32,
    pub r: f64,
    pub ratio: f64,
    pub verdict: Verdict,
}

/// `(σ, r, d, k, ratio)` before the β expansion.
type CellPoint = (f64, f64, u32, u32, f64);

/// Phase data over the grid; `a(r)` is computed once per `(σ, d, k, r)` and
/// shared across `β`.
pub fn boundary_sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    if grid.betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
        return domain("sweep betas must lie in (0, 1)");
    }
    let mut cells = Vec::new();
    for &sigma in &grid.sigmas {
        for &d in &grid.ds {
            for &k in &grid.ks {
                if k < 1 || k > d {
                    return domain(format!("sweep order k = {k} outside 1..={d}"));
                }
                cells.push((sigma, d, k));
            }
        }
    }
    let mut seen = HashSet::new();
    cells.retain(|c| seen.insert((c.0.to_bits(), c.1, c.2)));
    let per_cell = cells
        .par_iter()
        .map(|&(sigma, d, k)| -> Result<Vec<CellPoint>> {
            let dim = DimensionSpec::new(d, k, 0.5, sigma, grid.epsilon)?;
            let lc = log_binomial(d as u64, k as u64)?;
            let radii = match &grid.radii {
                RadiusGrid::Explicit(r) => r.clone(),
                RadiusGrid::Ratios { count, max_ratio } => {
                    let mut out = Vec::new();
                    for i in 1..=*count {
                        let target = max_ratio * i as f64 / *count as f64 * lc.sqrt();
                        match solve_r_star(target, k as usize, sigma, grid.epsilon, CalibrationMode::Exact) {
                            Ok(r) => out.push(r),
                            Err(Error::Range { .. }) => break,
                            Err(e) => return Err(e),
                        }
                    }
                    out
                }
            };
            let limit = admissible_radius(k as usize, sigma);
            radii
                .iter()
                .map(|&r| {
                    if !(r > 0.0 && r < limit) {
                        return domain(format!("radius {r} outside the admissible interval (0, {limit}) for k = {k}"));
                    }
                    Ok((sigma, r, d, k, boundary_ratio(r, k, &dim)?))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &beta in &grid.betas {
        for cell in &per_cell {
            for &(sigma, r, d, k, ratio) in cell {
                rows.push(SweepRow {
                    beta,
                    sigma,
                    d,
                    k,
                    r,
                    ratio,
                    verdict: verdict_for(ratio, beta, grid.band).verdict,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::solve_r_star;
    use crate::selector::{SelectorOptions, SubsetDecision};
    use crate::signal_bank::{build_pattern, ComponentSpec, PatternMode};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::sync::OnceLock;

    const D: u32 = 12;

    fn dim() -> DimensionSpec {
        DimensionSpec::new(D, 2, 0.87, 1.0, 1e-3).unwrap()
    }

    fn cfg() -> &'static SelectorConfig {
        static CFG: OnceLock<SelectorConfig> = OnceLock::new();
        CFG.get_or_init(|| SelectorConfig::build(dim(), SelectorOptions::default()).unwrap())
    }

    fn sub(idx: &[u32]) -> Subset {
        Subset::new(idx.to_vec(), D).unwrap()
    }

    fn pattern(amp: f64) -> SparsityPattern {
        let comps = vec![
            ComponentSpec::new(sub(&[1]), vec![1]).unwrap().with_amplitude(amp),
            ComponentSpec::new(sub(&[2]), vec![2]).unwrap(),
            ComponentSpec::new(sub(&[2, 3]), vec![2, 3]).unwrap(),
        ];
        build_pattern(&dim(), PatternMode::Explicit(comps)).unwrap()
    }

    fn decision(u: Subset, selected: bool) -> SubsetDecision {
        SubsetDecision {
            subset: u,
            selected,
            statistics: vec![],
            argmax: None,
        }
    }

    fn truth_result(p: &SparsityPattern) -> SelectionResult {
        let all: Vec<_> = (1..=2).flat_map(|k| LexSubsets::new(D, k)).map(|u| {
            let e = p.eta(&u);
            decision(u, e)
        }).collect();
        SelectionResult::from_decisions(all)
    }

    #[test]
    fn loss_of_truth_is_zero() {
        let p = pattern(1.0);
        assert_eq!(hamming_loss(&truth_result(&p), &p).unwrap(), 0);
    }

    #[test]
    fn loss_counts_spurious_selections() {
        let empty = build_pattern(&dim(), PatternMode::Explicit(vec![])).unwrap();
        let mut est = truth_result(&empty);
        for i in [0, 5, 40] {
            est.decisions[i].selected = true;
        }
        assert_eq!(hamming_loss(&est, &empty).unwrap(), 3);
    }

    #[test]
    fn loss_matches_positionwise_count() {
        let p = pattern(1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut universe: Vec<Subset> = p.components.iter().flatten().map(|c| c.subset.clone()).collect();
        while universe.len() < 20 {
            let a = rng.gen_range(1..D);
            let u = if rng.gen() { sub(&[a]) } else { sub(&[a, rng.gen_range(a + 1..=D)]) };
            if !universe.contains(&u) {
                universe.push(u);
            }
        }
        for _ in 0..50 {
            let picks: Vec<bool> = (0..20).map(|_| rng.gen()).collect();
            let brute = universe.iter().zip(&picks).filter(|(u, &s)| s != p.eta(u)).count() as u64;
            let est = SelectionResult::from_decisions(
                universe.iter().cloned().zip(picks).map(|(u, s)| decision(u, s)).collect(),
            );
            assert_eq!(hamming_loss(&est, &p).unwrap(), brute);
        }
    }

    #[test]
    fn loss_rejects_mismatched_universe() {
        let p = pattern(1.0);
        let mut est = truth_result(&p);
        est.decisions.retain(|d| d.subset != sub(&[1]));
        assert!(hamming_loss(&est, &p).is_err());
        let other = Subset::new(vec![1, 2, 3], 20).unwrap();
        let mut est = truth_result(&p);
        est.decisions.push(decision(other, false));
        assert!(hamming_loss(&est, &p).is_err());
    }

    #[test]
    fn pool_universe_contains_actives() {
        let p = pattern(1.0);
        let u = universe(&p, EnumerationMode::Pool { inactive_per_k: 20 }, 3).unwrap();
        assert_eq!(u[0].len(), D as usize);
        assert_eq!(u[1].len(), 21);
        assert!(u[1].contains(&sub(&[2, 3])));
        assert_eq!(u, universe(&p, EnumerationMode::Pool { inactive_per_k: 20 }, 3).unwrap());
        let full = universe(&p, EnumerationMode::Full, 3).unwrap();
        assert_eq!(full[1].len(), 66);
    }

    #[test]
    fn full_mode_refuses_huge_universes() {
        let big = DimensionSpec::new(200, 4, 0.87, 1.0, 5e-5).unwrap();
        let p = build_pattern(&big, PatternMode::PaperDefault).unwrap();
        assert!(matches!(universe(&p, EnumerationMode::Full, 1), Err(Error::Capacity { .. })));
    }

    #[test]
    fn strong_signals_are_recovered() {
        let p = pattern(1.0);
        for engine in [Engine::Shell, Engine::Coordinate] {
            let r = estimate_risk(&p, cfg(), 3, 1, EnumerationMode::Full, engine).unwrap();
            assert_eq!(r.err, 0.0, "{engine:?}");
            assert_eq!(r.per_cycle_losses.len(), 3);
            assert_eq!(r.evaluated, vec![12, 66]);
        }
    }

    #[test]
    fn risk_is_reproducible_and_consistent() {
        let p = pattern(0.02);
        let a = estimate_risk(&p, cfg(), 8, 77, EnumerationMode::Full, Engine::Shell).unwrap();
        let b = estimate_risk(&p, cfg(), 8, 77, EnumerationMode::Full, Engine::Shell).unwrap();
        assert_eq!(a, b);
        let mean = a.per_cycle_losses.iter().sum::<u64>() as f64 / 8.0;
        assert_eq!(a.err, mean);
        assert!(a.err >= 0.0 && a.err <= p.total_active() as f64 + a.false_positives.iter().sum::<f64>());
    }

    /// Amplitude at which the attenuated main effect is selected about half the time.
    fn borderline_amplitude() -> f64 {
        let c = cfg();
        let p = pattern(1.0);
        let sim = Simulator::new(&p, c).unwrap();
        // mean of the first statistic grows like amp²
        let s1 = sim.statistics(&sub(&[1]), 0, 0, Engine::Shell).unwrap()[0];
        (c.threshold(1) / s1).sqrt()
    }

    #[test]
    fn disjoint_seeds_agree_within_noise() {
        let p = pattern(borderline_amplitude());
        let a = estimate_risk(&p, cfg(), 200, 1, EnumerationMode::Full, Engine::Shell).unwrap();
        let b = estimate_risk(&p, cfg(), 200, 2, EnumerationMode::Full, Engine::Shell).unwrap();
        assert!(a.err > 0.05 && a.err < 0.95, "{}", a.err);
        let se = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        assert!((a.err - b.err).abs() <= 3.0 * se, "{} vs {}", a.err, b.err);
    }

    #[test]
    fn attenuation_matches_separate_runs() {
        let p = pattern(1.0);
        let base = borderline_amplitude();
        let alphas = [base * 0.5, base, base * 2.0, 1.0];
        for engine in [Engine::Shell, Engine::Coordinate] {
            let mode = EnumerationMode::Pool { inactive_per_k: 10 };
            let reps = attenuation_experiment(&alphas, &p, cfg(), 4, 9, mode, engine).unwrap();
            for (alpha, rep) in alphas.iter().zip(&reps) {
                let q = p.attenuated(&sub(&[1]), *alpha).unwrap();
                let direct = estimate_risk(&q, cfg(), 4, 9, mode, engine).unwrap();
                assert_eq!(rep.per_cycle_losses, direct.per_cycle_losses, "{engine:?} alpha {alpha}");
                assert_eq!(rep.false_negatives, direct.false_negatives);
                assert_eq!(rep.alpha, *alpha);
            }
        }
    }

    #[test]
    fn attenuation_risk_decreases_with_alpha() {
        let p = pattern(1.0);
        let base = borderline_amplitude();
        let alphas: Vec<f64> = [0.3, 0.6, 1.0, 1.5, 3.0].iter().map(|f| f * base).collect();
        let reps = attenuation_experiment(&alphas, &p, cfg(), 60, 5, EnumerationMode::Full, Engine::Shell).unwrap();
        for w in reps.windows(2) {
            assert!(w[1].err <= w[0].err + w[0].std_error().max(w[1].std_error()), "{} -> {}", w[0].err, w[1].err);
        }
        assert!(reps.iter().all(|r| r.err >= 0.0 && r.err <= 1.0 + r.false_positives.iter().sum::<f64>()));
    }

    #[test]
    fn attenuation_validates_alphas() {
        let p = pattern(1.0);
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(attenuation_experiment(&[bad], &p, cfg(), 1, 1, EnumerationMode::Full, Engine::Shell).is_err());
        }
        let no_main = build_pattern(&dim(), PatternMode::Explicit(vec![])).unwrap();
        assert!(attenuation_experiment(&[0.5], &no_main, cfg(), 1, 1, EnumerationMode::Full, Engine::Shell).is_err());
    }

    #[test]
    fn boundary_constants() {
        assert_relative_eq!(selection_threshold(0.87), 1.9241, epsilon = 5e-5);
        assert_eq!(format!("{:.5}", detection_threshold()), "1.41421");
        for b in [0.01, 0.3, 0.87, 0.999] {
            assert!(selection_threshold(b) > detection_threshold());
        }
        // the gap is √2 √(1 − β)
        for b in [0.9, 0.9999, 0.99999] {
            assert_relative_eq!(selection_threshold(b) - detection_threshold(), (2.0 * (1.0 - b)).sqrt(), epsilon = 1e-12);
        }
        assert!(selection_threshold(0.99999) - detection_threshold() <= 1e-2);
    }

    fn radius_for_ratio(ratio: f64, k: u32, dim: &DimensionSpec) -> f64 {
        let lc = log_binomial(dim.d as u64, k as u64).unwrap();
        solve_r_star(ratio * lc.sqrt(), k as usize, dim.sigma, dim.epsilon, CalibrationMode::Exact).unwrap()
    }

    #[test]
    fn synthetic_ratios_classify() {
        let d = DimensionSpec::new(50, 1, 0.87, 1.0, 1e-3).unwrap();
        let v = classify_regime(&[radius_for_ratio(2.2, 1, &d)], &d, DEFAULT_BAND).unwrap();
        assert_relative_eq!(v.ratio, 2.2, max_relative = 1e-7);
        assert_eq!(v.verdict, Verdict::Selectable);
        let v = classify_regime(&[radius_for_ratio(1.6, 1, &d)], &d, DEFAULT_BAND).unwrap();
        assert_eq!(v.verdict, Verdict::DetectableOnly);
        let v = classify_regime(&[radius_for_ratio(1.0, 1, &d)], &d, DEFAULT_BAND).unwrap();
        assert_eq!(v.verdict, Verdict::Undetectable);
        let v = classify_regime(&[radius_for_ratio(1.43, 1, &d)], &d, DEFAULT_BAND).unwrap();
        assert_eq!(v.verdict, Verdict::Boundary);
        assert!(classify_regime(&[0.01, 0.01], &d, DEFAULT_BAND).is_err());
    }

    #[test]
    fn classification_uses_the_weakest_order() {
        let d = DimensionSpec::new(30, 2, 0.87, 1.0, 1e-3).unwrap();
        let radii = [radius_for_ratio(3.0, 1, &d), radius_for_ratio(1.6, 2, &d)];
        let v = classify_regime(&radii, &d, DEFAULT_BAND).unwrap();
        assert_relative_eq!(v.ratio, 1.6, max_relative = 1e-7);
        assert_eq!(v.verdict, Verdict::DetectableOnly);
    }

    #[test]
    fn classification_is_invariant_under_rescaling() {
        // a ∝ ε⁻² at fixed r: shrinking ε by c and re-solving for the same a keeps the verdict
        let d1 = DimensionSpec::new(40, 1, 0.6, 1.0, 1e-3).unwrap();
        let d2 = DimensionSpec { epsilon: 5e-4, ..d1 };
        for ratio in [0.8, 1.7, 2.6] {
            let r1 = radius_for_ratio(ratio, 1, &d1);
            let a1 = a_exact(r1, 1, 1.0, d1.epsilon).unwrap();
            let a_scaled = a_exact(r1, 1, 1.0, d2.epsilon).unwrap();
            assert_relative_eq!(a_scaled, 4.0 * a1, max_relative = 1e-12);
            let r2 = solve_r_star(a1, 1, 1.0, d2.epsilon, CalibrationMode::Exact).unwrap();
            let v1 = classify_regime(&[r1], &d1, DEFAULT_BAND).unwrap();
            let v2 = classify_regime(&[r2], &d2, DEFAULT_BAND).unwrap();
            assert_eq!(v1.verdict, v2.verdict);
        }
    }

    fn sweep(ks: Vec<u32>, betas: Vec<f64>, count: usize) -> Vec<SweepRow> {
        boundary_sweep(&SweepGrid {
            betas,
            sigmas: vec![1.0],
            ds: vec![50],
            ks,
            radii: RadiusGrid::Ratios { count, max_ratio: 3.0 },
            epsilon: 1e-3,
            band: DEFAULT_BAND,
        })
        .unwrap()
    }

    #[test]
    fn sweep_transitions_are_monotone_in_r() {
        let rows = sweep(vec![1], vec![0.87], 60);
        assert_eq!(rows.len(), 60);
        let rank = |v: Verdict| match v {
            Verdict::Undetectable => 0,
            Verdict::Boundary => 1,
            Verdict::DetectableOnly => 2,
            Verdict::Selectable => 3,
        };
        assert!(rows.windows(2).all(|w| w[0].r < w[1].r && w[0].ratio < w[1].ratio));
        let mut last = 0;
        let mut seen = HashSet::new();
        for row in &rows {
            let v = rank(row.verdict);
            if row.verdict != Verdict::Boundary {
                assert!(v >= last);
                last = v;
            }
            seen.insert(v);
        }
        assert!(seen.contains(&0) && seen.contains(&2) && seen.contains(&3));
    }

    #[test]
    fn selection_region_inside_detection_region() {
        let betas: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
        let rows = sweep(vec![1, 2], betas, 25);
        assert_eq!(rows.len(), 500);
        for row in rows.iter().filter(|r| r.verdict == Verdict::Selectable) {
            assert!(row.ratio > detection_threshold());
        }
    }

    #[test]
    fn sweep_rejects_inadmissible_radii() {
        let grid = SweepGrid {
            betas: vec![0.5],
            sigmas: vec![1.0],
            ds: vec![50],
            ks: vec![1],
            radii: RadiusGrid::Explicit(vec![1.0]),
            epsilon: 1e-3,
            band: DEFAULT_BAND,
        };
        assert!(boundary_sweep(&grid).is_err());
    }
}
