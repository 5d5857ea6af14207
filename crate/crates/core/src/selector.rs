//! Sequence-space observations, the weighted chi-square statistics and the
//! adaptive selector.
//!
//! Two engines produce the statistics of a subset. [`Engine::Coordinate`]
//! draws every observed coefficient `X_ℓ = η θ_ℓ + ε ξ_ℓ` and sums
//! `ω_ℓ((X_ℓ/ε)² − 1)` directly. [`Engine::Shell`] uses that the weights only
//! depend on `|ℓ|²`: the sum of `(X_ℓ/ε)²` over a shell of `N` points is a
//! noncentral chi-square with `N` degrees of freedom, so one draw per shell
//! gives statistics with exactly the same joint law at a fraction of the cost.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::extremal::{
    beta_grid, calibrate_order, support_radius, weights, CalibrationMode, GridSpec, OrderGrid, WeightProfile,
};
use crate::lattice::{
    for_each_ball_point, log_binomial, norm_sq, shell_convolve, shell_table, DimensionSpec, FrequencyIndex,
    LatticePoints, Subset,
};
use crate::numeric::CompensatedSum;
use crate::quadrature::QuadratureSpec;
use crate::rng::{self, tags};
use crate::signal_bank::{CoefficientCache, CoefficientTable, ComponentSpec, ProductCoefficients, SparsityPattern};

/// Truncation radii `n` used for the published experiment, orders 1 to 4.
pub const PAPER_TRUNCATION: [u32; 4] = [622, 154, 65, 36];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsHatRule {
    /// `1/√log C(d,k)`.
    Fixed,
    /// `max(1/√log d, log s · log log d / log d)`.
    GrowingS,
}

/// Threshold inflation `ε̂`.
pub fn epsilon_hat(d: u32, k: u32, s: u32, rule: EpsHatRule) -> Result<f64> {
    match rule {
        EpsHatRule::Fixed => {
            let lc = log_binomial(d as u64, k as u64)?;
            if !(lc > 0.0) {
                return domain(format!("epsilon_hat: log C({d},{k}) = {lc} is not positive"));
            }
            Ok(1.0 / lc.sqrt())
        }
        EpsHatRule::GrowingS => {
            let ld = (d as f64).ln();
            if !(ld.ln() > 0.0) {
                return domain(format!("epsilon_hat: growing_s rule needs log log d > 0, got d = {d}"));
            }
            if s < 1 {
                return domain("epsilon_hat: s must be at least 1");
            }
            Ok((1.0 / ld.sqrt()).max((s as f64).ln() * ld.ln() / ld))
        }
    }
}

/// `t = √((2 + ε̂)(log C(d,k) + log M))`.
pub fn threshold(d: u32, k: u32, m: usize, eps_hat: f64) -> Result<f64> {
    if m < 1 {
        return domain("threshold: need M >= 1");
    }
    let lc = log_binomial(d as u64, k as u64)?;
    Ok(((2.0 + eps_hat) * (lc + (m as f64).ln())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    /// [`PAPER_TRUNCATION`].
    PaperPreset,
    /// `⌈max_m R(r*_m)⌉`.
    Rule,
}

pub fn truncation_radius(k: u32, grid: &GridSpec, sigma: f64, mode: TruncationMode) -> Result<u32> {
    match mode {
        TruncationMode::PaperPreset => match k {
            1..=4 => Ok(PAPER_TRUNCATION[k as usize - 1]),
            _ => domain(format!("no preset truncation radius for order k = {k}")),
        },
        TruncationMode::Rule => {
            let order = grid
                .order(k)
                .ok_or_else(|| Error::Domain(format!("grid has no order k = {k}")))?;
            let r = order
                .r_stars
                .iter()
                .map(|&r| support_radius(r, k as usize, sigma))
                .fold(0.0, f64::max);
            Ok((r.ceil() as u32).max(1))
        }
    }
}

/// Whether the box `max |l_j| <= n` contains every nonzero weight of every profile.
pub fn truncation_covers(n: u32, profiles: &[WeightProfile]) -> bool {
    profiles.iter().all(|p| p.max_coordinate() <= n as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorOptions {
    pub m: usize,
    pub calibration: CalibrationMode,
    pub eps_hat_rule: EpsHatRule,
    pub truncation: TruncationMode,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        SelectorOptions {
            m: 20,
            calibration: CalibrationMode::Exact,
            eps_hat_rule: EpsHatRule::Fixed,
            truncation: TruncationMode::Rule,
        }
    }
}

/// Calibrated grid, thresholds, truncation radii and weight profiles for orders `1..=s`.
#[derive(Debug, Clone)]
pub struct SelectorConfig {
    pub dim: DimensionSpec,
    pub grid: GridSpec,
    /// `thresholds[k - 1]`; infinite when the grid is empty.
    pub thresholds: Vec<f64>,
    pub eps_hat_rule: EpsHatRule,
    /// `truncation[k - 1]`.
    pub truncation: Vec<u32>,
    profiles: Vec<Vec<WeightProfile>>,
}

impl SelectorConfig {
    pub fn build(dim: DimensionSpec, opts: SelectorOptions) -> Result<Self> {
        dim.validate()?;
        let betas = beta_grid(opts.m)?;
        let mut orders = Vec::new();
        let mut thresholds = Vec::new();
        let mut profiles = Vec::new();
        for k in 1..=dim.s {
            let eps_hat = epsilon_hat(dim.d, k, dim.s, opts.eps_hat_rule)?;
            let (targets, r_stars) = calibrate_order(dim.d, k, &betas, dim.sigma, dim.epsilon, opts.calibration)?;
            let t = if opts.m == 0 {
                f64::INFINITY
            } else {
                threshold(dim.d, k, opts.m, eps_hat)?
            };
            profiles.push(
                r_stars
                    .iter()
                    .map(|&r| weights(r, k as usize, dim.sigma, dim.epsilon))
                    .collect::<Result<Vec<_>>>()?,
            );
            thresholds.push(t);
            orders.push(OrderGrid {
                k,
                targets,
                r_stars,
                eps_hat,
            });
        }
        let grid = GridSpec {
            m: opts.m,
            betas,
            mode: opts.calibration,
            orders,
        };
        let truncation = (1..=dim.s)
            .map(|k| truncation_radius(k, &grid, dim.sigma, opts.truncation))
            .collect::<Result<Vec<_>>>()?;
        Ok(SelectorConfig {
            dim,
            grid,
            thresholds,
            eps_hat_rule: opts.eps_hat_rule,
            truncation,
            profiles,
        })
    }

    /// Weight profiles of order `k`, one per grid point.
    pub fn profiles(&self, k: u32) -> &[WeightProfile] {
        self.profiles.get(k as usize - 1).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn threshold(&self, k: u32) -> f64 {
        self.thresholds[k as usize - 1]
    }

    pub fn truncation(&self, k: u32) -> u32 {
        self.truncation[k as usize - 1]
    }

    /// Radius of the union of the order-`k` weight supports.
    pub fn observation_radius(&self, k: u32) -> f64 {
        self.profiles(k).iter().map(|p| p.support_radius).fold(0.0, f64::max)
    }

    fn check_order(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.dim.s as usize {
            return domain(format!("order k = {k} outside 1..={}", self.dim.s));
        }
        Ok(())
    }
}

/// Observed coefficients of one subset, keyed in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub owner: Subset,
    pub epsilon: f64,
    pub truncation_n: u32,
    points: LatticePoints,
    values: Vec<f64>,
}

impl Observation {
    pub fn new(owner: Subset, epsilon: f64, truncation_n: u32, entries: Vec<(FrequencyIndex, f64)>) -> Result<Self> {
        if !(epsilon > 0.0) {
            return domain(format!("observation noise level must be positive, got {epsilon}"));
        }
        let k = owner.k();
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return domain("observation lists an index twice");
        }
        for (l, x) in &entries {
            if l.k() != k {
                return domain(format!("index {:?} does not fit subset {owner}", l.coords()));
            }
            if l.coords().iter().any(|c| c.unsigned_abs() > truncation_n) {
                return domain(format!("index {:?} lies outside the truncation box n = {truncation_n}", l.coords()));
            }
            if !x.is_finite() {
                return domain(format!("non-finite value at {:?}", l.coords()));
            }
        }
        let values = entries.iter().map(|e| e.1).collect();
        let points = LatticePoints::from_points(k, entries.into_iter().map(|e| e.0.coords().to_vec()).collect())?;
        Ok(Observation {
            owner,
            epsilon,
            truncation_n,
            points,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &LatticePoints {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, l: &[i32]) -> Option<f64> {
        self.points.position(l).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[i32], f64)> + '_ {
        self.points.iter().zip(self.values.iter().copied())
    }

    /// `(q, count, Σ ((X/ε)² − 1))` per occupied shell, increasing in `q`.
    fn shell_sums(&self) -> Vec<(u64, u64, f64)> {
        let mut by_q: HashMap<u64, (u64, CompensatedSum)> = HashMap::new();
        for (l, x) in self.iter() {
            let z = x / self.epsilon;
            let e = by_q.entry(norm_sq(l)).or_default();
            e.0 += 1;
            e.1.add(z * z - 1.0);
        }
        let mut out: Vec<_> = by_q.into_iter().map(|(q, (c, s))| (q, c, s.value())).collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }
}

fn missing_support(owner: &Subset, n: u32) -> Error {
    Error::Domain(format!(
        "observation of {owner} does not cover the weight support (truncation n = {n} too small?)"
    ))
}

/// `S = Σ_ℓ ω_ℓ((X_ℓ/ε)² − 1)`, summed point by point.
pub fn statistic_s(obs: &Observation, w: &WeightProfile) -> Result<f64> {
    if w.k != obs.owner.k() {
        return domain(format!("order-{} weights applied to subset {}", w.k, obs.owner));
    }
    let mut acc = CompensatedSum::new();
    let mut covered = 0u64;
    for (l, x) in obs.iter() {
        let omega = w.weight_at(l);
        if omega > 0.0 {
            covered += 1;
            let z = x / obs.epsilon;
            acc.add(omega * (z * z - 1.0));
        }
    }
    if covered != w.support_len() {
        return Err(missing_support(&obs.owner, obs.truncation_n));
    }
    Ok(acc.value())
}

/// All statistics of `obs`, one per profile, aggregated shell by shell.
pub fn statistics(obs: &Observation, profiles: &[WeightProfile]) -> Result<Vec<f64>> {
    let sums = obs.shell_sums();
    profiles
        .iter()
        .map(|w| {
            if w.k != obs.owner.k() {
                return domain(format!("order-{} weights applied to subset {}", w.k, obs.owner));
            }
            let mut acc = CompensatedSum::new();
            for s in w.shells() {
                match sums.binary_search_by_key(&s.norm_sq, |e| e.0) {
                    Ok(i) if sums[i].1 == s.multiplicity => acc.add(s.value * sums[i].2),
                    _ => return Err(missing_support(&obs.owner, obs.truncation_n)),
                }
            }
            Ok(acc.value())
        })
        .collect()
}

/// Decision for one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDecision {
    pub subset: Subset,
    pub selected: bool,
    pub statistics: Vec<f64>,
    /// Grid index of the largest statistic, when selected.
    pub argmax: Option<usize>,
}

impl SubsetDecision {
    pub fn new(subset: Subset, statistics: Vec<f64>, threshold: f64) -> Self {
        let selected = statistics.iter().any(|&s| s > threshold);
        let argmax = if selected {
            statistics
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
        } else {
            None
        };
        SubsetDecision {
            subset,
            selected,
            statistics,
            argmax,
        }
    }
}

/// `η̂` over an evaluated universe, ordered by `(k, indices)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionResult {
    pub decisions: Vec<SubsetDecision>,
}

impl SelectionResult {
    pub fn from_decisions(mut decisions: Vec<SubsetDecision>) -> Self {
        decisions.sort_by(|a, b| (a.subset.k(), &a.subset).cmp(&(b.subset.k(), &b.subset)));
        SelectionResult { decisions }
    }

    pub fn eta_hat(&self, subset: &Subset) -> Option<bool> {
        self.decisions
            .binary_search_by(|d| (d.subset.k(), &d.subset).cmp(&(subset.k(), subset)))
            .ok()
            .map(|i| self.decisions[i].selected)
    }

    pub fn selected(&self) -> impl Iterator<Item = &SubsetDecision> {
        self.decisions.iter().filter(|d| d.selected)
    }

    pub fn selected_count(&self) -> usize {
        self.selected().count()
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }
}

/// Applies the selector to observations.
pub fn select<I>(observations: I, config: &SelectorConfig) -> Result<SelectionResult>
where
    I: IntoIterator<Item = Observation>,
{
    let mut out = Vec::new();
    for obs in observations {
        let k = obs.owner.k();
        config.check_order(k)?;
        let stats = statistics(&obs, config.profiles(k as u32))?;
        out.push(SubsetDecision::new(obs.owner, stats, config.threshold(k as u32)));
    }
    Ok(SelectionResult::from_decisions(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// One draw per observed coefficient.
    Coordinate,
    /// One noncentral chi-square draw per shell.
    #[default]
    Shell,
}

enum SignalSource {
    Product(ProductCoefficients),
    Table(std::sync::Arc<CoefficientTable>),
}

struct ActiveSignal {
    amplitude: f64,
    source: SignalSource,
    /// `√(Σ_shell θ²)/ε` without the amplitude, per shell of the order plan.
    unit_sqrt_lambda: Vec<f64>,
}

impl ActiveSignal {
    #[inline]
    fn theta(&self, l: &[i32], amplitude: f64) -> f64 {
        match &self.source {
            SignalSource::Product(p) => p.at_with_amplitude(amplitude, l),
            SignalSource::Table(t) => {
                // tables are small; a map lookup per observed point is fine
                let key = FrequencyIndex::new(l.to_vec()).expect("lattice point");
                amplitude * t.entries.get(&key).copied().unwrap_or(0.0)
            }
        }
    }
}

struct OrderPlan {
    n: u32,
    radius: f64,
    shells: Vec<(u64, u64)>,
    /// `weights[i * m + j]`: weight of grid point `j` on shell `i`.
    weights: Vec<f64>,
    full: Vec<ChiSquared<f64>>,
    rest: Vec<Option<ChiSquared<f64>>>,
}

/// Draws observations and statistics for a fixed pattern and configuration.
pub struct Simulator<'a> {
    pattern: &'a SparsityPattern,
    config: &'a SelectorConfig,
    plans: Vec<OrderPlan>,
    signals: HashMap<Subset, ActiveSignal>,
}

impl<'a> Simulator<'a> {
    pub fn new(pattern: &'a SparsityPattern, config: &'a SelectorConfig) -> Result<Self> {
        Self::with_quadrature(pattern, config, &QuadratureSpec::default(), &CoefficientCache::new())
    }

    pub fn with_quadrature(
        pattern: &'a SparsityPattern,
        config: &'a SelectorConfig,
        quad: &QuadratureSpec,
        cache: &CoefficientCache,
    ) -> Result<Self> {
        if pattern.d != config.dim.d || pattern.s != config.dim.s {
            return domain(format!(
                "pattern (d = {}, s = {}) does not match configuration (d = {}, s = {})",
                pattern.d, pattern.s, config.dim.d, config.dim.s
            ));
        }
        let m = config.grid.m;
        let mut plans = Vec::new();
        for k in 1..=config.dim.s {
            let n = config.truncation(k);
            let radius = config.observation_radius(k);
            let q_limit = (radius * radius).ceil() as u64;
            let shells = shell_table(k as usize, q_limit, Some(n));
            let mut weights = vec![0.0; shells.len() * m];
            for (j, p) in config.profiles(k).iter().enumerate() {
                for s in p.shells() {
                    match shells.binary_search_by_key(&s.norm_sq, |e| e.0) {
                        Ok(i) if shells[i].1 == s.multiplicity => weights[i * m + j] = s.value,
                        _ => {
                            return domain(format!(
                                "truncation n = {n} does not cover the order-{k} weight support"
                            ))
                        }
                    }
                }
            }
            let chi = |dof: u64| ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()));
            let full = shells.iter().map(|&(_, c)| chi(c)).collect::<Result<Vec<_>>>()?;
            let rest = shells
                .iter()
                .map(|&(_, c)| if c > 1 { chi(c - 1).map(Some) } else { Ok(None) })
                .collect::<Result<Vec<_>>>()?;
            plans.push(OrderPlan {
                n,
                radius,
                shells,
                weights,
                full,
                rest,
            });
        }
        let eps = config.dim.epsilon;
        let mut signals = HashMap::new();
        for comp in pattern.components.iter().flatten() {
            let plan = &plans[comp.k() - 1];
            let (source, energy) = signal_energy(comp, plan, quad, cache)?;
            let unit_sqrt_lambda = energy.iter().map(|e| e.max(0.0).sqrt() / eps).collect();
            signals.insert(
                comp.subset.clone(),
                ActiveSignal {
                    amplitude: comp.amplitude,
                    source,
                    unit_sqrt_lambda,
                },
            );
        }
        Ok(Simulator {
            pattern,
            config,
            plans,
            signals,
        })
    }

    pub fn pattern(&self) -> &SparsityPattern {
        self.pattern
    }

    pub fn config(&self) -> &SelectorConfig {
        self.config
    }

    fn plan(&self, subset: &Subset) -> Result<&OrderPlan> {
        self.config.check_order(subset.k())?;
        if subset.indices().last().copied().unwrap_or(0) > self.config.dim.d {
            return domain(format!("subset {subset} exceeds d = {}", self.config.dim.d));
        }
        Ok(&self.plans[subset.k() - 1])
    }

    fn amplitude(&self, subset: &Subset, amplitude: Option<f64>) -> Option<(&ActiveSignal, f64)> {
        self.signals
            .get(subset)
            .map(|s| (s, amplitude.unwrap_or(s.amplitude)))
    }

    /// Observation of `subset` in cycle `cycle`, over the weight supports plus any tabulated signal.
    pub fn observe(&self, subset: &Subset, seed: u64, cycle: u64) -> Result<Observation> {
        self.observe_with_amplitude(subset, seed, cycle, None)
    }

    fn observe_with_amplitude(
        &self,
        subset: &Subset,
        seed: u64,
        cycle: u64,
        amplitude: Option<f64>,
    ) -> Result<Observation> {
        let plan = self.plan(subset)?;
        let k = subset.k();
        let active = self.amplitude(subset, amplitude);
        let mut pts: Vec<Vec<i32>> = Vec::new();
        for_each_ball_point(k, plan.radius, Some(plan.n), |p| pts.push(p.to_vec()));
        if let Some((ActiveSignal { source: SignalSource::Table(t), .. }, _)) = active {
            let extra = t
                .entries
                .keys()
                .filter(|l| l.coords().iter().all(|c| c.unsigned_abs() <= plan.n))
                .map(|l| l.coords().to_vec());
            pts.extend(extra);
        }
        let points = LatticePoints::from_points(k, pts)?;
        let eps = self.config.dim.epsilon;
        let mut rng = rng::substream(seed, &stream_tag(tags::OBSERVATION, cycle, subset));
        let values = points
            .iter()
            .map(|l| {
                let xi: f64 = rng.sample(StandardNormal);
                let theta = active.map_or(0.0, |(s, a)| s.theta(l, a));
                theta + eps * xi
            })
            .collect();
        Ok(Observation {
            owner: subset.clone(),
            epsilon: eps,
            truncation_n: plan.n,
            points,
            values,
        })
    }

    /// Observations for a list of subsets (cycle 0).
    pub fn observations<'s, I>(&'s self, subsets: I, seed: u64) -> impl Iterator<Item = Result<Observation>> + 's
    where
        I: IntoIterator<Item = Subset>,
        I::IntoIter: 's,
    {
        subsets.into_iter().map(move |u| self.observe(&u, seed, 0))
    }

    fn shell_statistics(&self, subset: &Subset, seed: u64, cycle: u64, amplitude: Option<f64>) -> Result<Vec<f64>> {
        let plan = self.plan(subset)?;
        let m = self.config.grid.m;
        let active = self.amplitude(subset, amplitude);
        let mut rng = rng::substream(seed, &stream_tag(tags::SHELL, cycle, subset));
        let mut acc = vec![CompensatedSum::new(); m];
        for (i, &(_, count)) in plan.shells.iter().enumerate() {
            let y = match active {
                None => plan.full[i].sample(&mut rng),
                Some((s, a)) => {
                    let z: f64 = rng.sample(StandardNormal);
                    let c = z + a.abs() * s.unit_sqrt_lambda[i];
                    c * c + plan.rest[i].as_ref().map_or(0.0, |d| d.sample(&mut rng))
                }
            };
            let centred = y - count as f64;
            for (j, a) in acc.iter_mut().enumerate() {
                let w = plan.weights[i * m + j];
                if w != 0.0 {
                    a.add(w * centred);
                }
            }
        }
        Ok(acc.iter().map(|a| a.value()).collect())
    }

    /// The `M` statistics of `subset` in cycle `cycle`.
    pub fn statistics(&self, subset: &Subset, seed: u64, cycle: u64, engine: Engine) -> Result<Vec<f64>> {
        self.statistics_with_amplitude(subset, seed, cycle, engine, None)
    }

    /// As [`Simulator::statistics`], overriding the amplitude of an active component.
    ///
    /// The random draws do not depend on the amplitude, so statistics at
    /// different amplitudes share their noise.
    pub fn statistics_with_amplitude(
        &self,
        subset: &Subset,
        seed: u64,
        cycle: u64,
        engine: Engine,
        amplitude: Option<f64>,
    ) -> Result<Vec<f64>> {
        match engine {
            Engine::Shell => self.shell_statistics(subset, seed, cycle, amplitude),
            Engine::Coordinate => {
                let obs = self.observe_with_amplitude(subset, seed, cycle, amplitude)?;
                statistics(&obs, self.config.profiles(subset.k() as u32))
            }
        }
    }

    pub fn decide(&self, subset: &Subset, seed: u64, cycle: u64, engine: Engine, amplitude: Option<f64>) -> Result<SubsetDecision> {
        let stats = self.statistics_with_amplitude(subset, seed, cycle, engine, amplitude)?;
        Ok(SubsetDecision::new(subset.clone(), stats, self.config.threshold(subset.k() as u32)))
    }

    /// Selector over `subsets`, evaluated in parallel.
    pub fn evaluate(&self, subsets: &[Subset], seed: u64, cycle: u64, engine: Engine) -> Result<SelectionResult> {
        let decisions = subsets
            .par_iter()
            .map(|u| self.decide(u, seed, cycle, engine, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(SelectionResult::from_decisions(decisions))
    }
}

fn stream_tag(kind: u64, cycle: u64, subset: &Subset) -> Vec<u64> {
    let mut tag = vec![kind, cycle, subset.k() as u64];
    tag.extend(subset.indices().iter().map(|&i| i as u64));
    tag
}

/// Per-shell `Σ θ²` of a component with unit amplitude.
fn signal_energy(
    comp: &ComponentSpec,
    plan: &OrderPlan,
    quad: &QuadratureSpec,
    cache: &CoefficientCache,
) -> Result<(SignalSource, Vec<f64>)> {
    let q_limit = plan.shells.last().map_or(0, |s| s.0 + 1);
    let mut energy = vec![0.0; plan.shells.len()];
    match &comp.table {
        Some(table) => {
            for (l, &t) in &table.entries {
                if l.coords().iter().any(|c| c.unsigned_abs() > plan.n) {
                    continue;
                }
                if let Ok(i) = plan.shells.binary_search_by_key(&l.norm_sq(), |s| s.0) {
                    energy[i] += t * t;
                }
            }
            Ok((SignalSource::Table(table.clone()), energy))
        }
        None => {
            let coeffs = ProductCoefficients::new(comp, plan.n, quad, cache)?;
            let dense = shell_convolve(&coeffs.folded_energy(), q_limit);
            for (e, &(q, _)) in energy.iter_mut().zip(&plan.shells) {
                *e = dense[q as usize];
            }
            Ok((SignalSource::Product(coeffs), energy))
        }
    }
}

/// Observations of `subsets` (cycle 0), collected.
pub fn simulate_observations<I>(
    pattern: &SparsityPattern,
    config: &SelectorConfig,
    subsets: I,
    seed: u64,
) -> Result<Vec<Observation>>
where
    I: IntoIterator<Item = Subset>,
{
    let sim = Simulator::new(pattern, config)?;
    let out: Result<Vec<_>> = sim.observations(subsets, seed).collect();
    out
}

/// Monte Carlo check of the exponential tail bounds for one weight profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TailAudit {
    pub t: f64,
    pub trials: u64,
    /// Empirical `P₀(S > T)`.
    pub exceedance: f64,
    /// `exp(−T²/2)`.
    pub reference: f64,
    /// `T · max ω`; the bound is only meaningful when this is small.
    pub regime_product: f64,
    /// Set when `T · max ω > 0.1`.
    pub regime_warning: bool,
    /// Empirical `P_θ(S − E_θ S ≤ −T)` when a signal was supplied.
    pub lower_exceedance: Option<f64>,
    /// `E_θ S = Σ ω_ℓ (θ_ℓ/ε)²` for the supplied signal.
    pub signal_mean: Option<f64>,
}

const AUDIT_CHUNK: u64 = 8192;

/// Samples `S` under the null (and under `signal` when given) `trials` times.
pub fn tail_bound_audit(
    t: f64,
    trials: u64,
    seed: u64,
    w: &WeightProfile,
    signal: Option<&CoefficientTable>,
) -> Result<TailAudit> {
    if !(t >= 0.0 && t.is_finite()) {
        return domain(format!("tail audit level must be finite and nonnegative, got {t}"));
    }
    if trials == 0 {
        return domain("tail audit needs at least one trial");
    }
    let shells = w.shells();
    let chi = |dof: u64| ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()));
    let full = shells.iter().map(|s| chi(s.multiplicity)).collect::<Result<Vec<_>>>()?;
    let rest = shells
        .iter()
        .map(|s| if s.multiplicity > 1 { chi(s.multiplicity - 1).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>>>()?;
    let sqrt_lambda: Option<Vec<f64>> = match signal {
        None => None,
        Some(table) => {
            if table.owner.k() != w.k {
                return domain(format!("order-{} signal audited with order-{} weights", table.owner.k(), w.k));
            }
            let mut lambda = vec![0.0; shells.len()];
            for (l, &th) in &table.entries {
                if let Ok(i) = shells.binary_search_by_key(&l.norm_sq(), |s| s.norm_sq) {
                    lambda[i] += (th / w.epsilon).powi(2);
                }
            }
            Some(lambda.into_iter().map(f64::sqrt).collect())
        }
    };
    let signal_mean = sqrt_lambda.as_ref().map(|sl| {
        shells
            .iter()
            .zip(sl)
            .map(|(s, l)| s.value * l * l)
            .collect::<CompensatedSum>()
            .value()
    });
    let chunks = trials.div_ceil(AUDIT_CHUNK);
    let (upper, lower) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::substream(seed, &[tags::AUDIT, c]);
            let len = AUDIT_CHUNK.min(trials - c * AUDIT_CHUNK);
            let (mut up, mut low) = (0u64, 0u64);
            for _ in 0..len {
                let mut s0 = CompensatedSum::new();
                for (i, sh) in shells.iter().enumerate() {
                    s0.add(sh.value * (full[i].sample(&mut rng) - sh.multiplicity as f64));
                }
                if s0.value() > t {
                    up += 1;
                }
                if let (Some(sl), Some(mean)) = (&sqrt_lambda, signal_mean) {
                    let mut s1 = CompensatedSum::new();
                    for (i, sh) in shells.iter().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        let c = z + sl[i];
                        let y = c * c + rest[i].as_ref().map_or(0.0, |d| d.sample(&mut rng));
                        s1.add(sh.value * (y - sh.multiplicity as f64));
                    }
                    if s1.value() - mean <= -t {
                        low += 1;
                    }
                }
            }
            (up, low)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let regime_product = t * w.max_weight();
    Ok(TailAudit {
        t,
        trials,
        exceedance: upper as f64 / trials as f64,
        reference: (-0.5 * t * t).exp(),
        regime_product,
        regime_warning: regime_product > 0.1,
        lower_exceedance: signal.map(|_| lower as f64 / trials as f64),
        signal_mean,
    })
}

/// Sample mean and variance of `S` over `draws` noise-only observations.
pub fn null_moments(w: &WeightProfile, draws: u64, seed: u64) -> Result<(f64, f64)> {
    if draws < 2 {
        return domain("null moments need at least two draws");
    }
    let shells = w.shells();
    let full = shells
        .iter()
        .map(|s| ChiSquared::new(s.multiplicity as f64).map_err(|e| Error::Domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let chunks = draws.div_ceil(AUDIT_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::substream(seed, &[tags::NULL_MOMENTS, c]);
            let len = AUDIT_CHUNK.min(draws - c * AUDIT_CHUNK);
            (0..len)
                .map(|_| {
                    shells
                        .iter()
                        .zip(&full)
                        .map(|(sh, chi)| sh.value * (chi.sample(&mut rng) - sh.multiplicity as f64))
                        .collect::<CompensatedSum>()
                        .value()
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    let n = draws as f64;
    let mean = parts.iter().flatten().copied().collect::<CompensatedSum>().value() / n;
    let ss = parts
        .iter()
        .flatten()
        .map(|&x| (x - mean) * (x - mean))
        .collect::<CompensatedSum>()
        .value();
    Ok((mean, ss / (n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_bank::{build_pattern, PatternMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn config(d: u32, s: u32, eps: f64, m: usize) -> SelectorConfig {
        let dim = DimensionSpec::new(d, s, 0.87, 1.0, eps).unwrap();
        SelectorConfig::build(
            dim,
            SelectorOptions {
                m,
                ..SelectorOptions::default()
            },
        )
        .unwrap()
    }

    /// d = 50, s = 2, ε = 1e-3, M = 20: small supports, cheap to simulate.
    fn small() -> &'static SelectorConfig {
        static CFG: OnceLock<SelectorConfig> = OnceLock::new();
        CFG.get_or_init(|| config(50, 2, 1e-3, 20))
    }

    fn empty_pattern(cfg: &SelectorConfig) -> SparsityPattern {
        build_pattern(&cfg.dim, PatternMode::Explicit(vec![])).unwrap()
    }

    fn table_pattern(cfg: &SelectorConfig, table: CoefficientTable) -> SparsityPattern {
        build_pattern(&cfg.dim, PatternMode::Explicit(vec![ComponentSpec::from_table(table).unwrap()])).unwrap()
    }

    fn subset(idx: &[u32]) -> Subset {
        Subset::new(idx.to_vec(), 50).unwrap()
    }

    fn toy_table(scale: f64) -> CoefficientTable {
        let mut t = CoefficientTable::new(subset(&[1]));
        for (l, v) in [(1, 3.0), (-1, -2.0), (2, 1.5), (-3, 1.0), (4, -0.5)] {
            t.insert(FrequencyIndex::new(vec![l]).unwrap(), v * scale).unwrap();
        }
        t
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn epsilon_hat_values() {
        assert_relative_eq!(epsilon_hat(50, 1, 4, EpsHatRule::Fixed).unwrap(), 1.0 / 50f64.ln().sqrt(), epsilon = 1e-15);
        assert_relative_eq!(epsilon_hat(50, 1, 4, EpsHatRule::Fixed).unwrap(), 0.505591, epsilon = 1e-6);
        assert_relative_eq!(epsilon_hat(50, 2, 4, EpsHatRule::Fixed).unwrap(), 0.37501, epsilon = 5e-5);
        let ld = 50f64.ln();
        let g = epsilon_hat(50, 1, 4, EpsHatRule::GrowingS).unwrap();
        assert_relative_eq!(g, (1.0 / ld.sqrt()).max(4f64.ln() * ld.ln() / ld), epsilon = 1e-15);
        assert!(epsilon_hat(3, 3, 1, EpsHatRule::Fixed).is_err());
        assert!(epsilon_hat(2, 1, 1, EpsHatRule::GrowingS).is_err());
    }

    #[test]
    fn epsilon_hat_times_log_grows() {
        let v: Vec<f64> = [100u32, 1000, 10000]
            .iter()
            .map(|&d| epsilon_hat(d, 1, 1, EpsHatRule::Fixed).unwrap() * (d as f64).ln())
            .collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        for (d, x) in [100f64, 1000.0, 10000.0].iter().zip(&v) {
            assert_relative_eq!(*x, d.ln().sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(threshold(50, 1, 20, 0.505591).unwrap(), 4.16029, epsilon = 1e-5);
        assert_relative_eq!(threshold(50, 1, 1, 0.0).unwrap(), 2.79714, epsilon = 1e-5);
        assert!(threshold(50, 1, 40, 0.3).unwrap() > threshold(50, 1, 20, 0.3).unwrap());
        assert!(threshold(50, 1, 0, 0.3).is_err());
    }

    #[test]
    fn stored_thresholds_match_recomputation() {
        let cfg = small();
        for k in 1..=2 {
            let o = cfg.grid.order(k).unwrap();
            let t = threshold(50, k, 20, o.eps_hat).unwrap();
            assert_relative_eq!(cfg.threshold(k), t, max_relative = 1e-12);
        }
    }

    #[test]
    fn preset_truncation() {
        let cfg = small();
        assert_eq!(truncation_radius(1, &cfg.grid, 1.0, TruncationMode::PaperPreset).unwrap(), 622);
        assert_eq!(truncation_radius(4, &cfg.grid, 1.0, TruncationMode::PaperPreset).unwrap(), 36);
        assert!(truncation_radius(5, &cfg.grid, 1.0, TruncationMode::PaperPreset).is_err());
    }

    #[test]
    fn rule_truncation_covers_supports_by_enumeration() {
        let cfg = small();
        for k in 1..=2u32 {
            let n = cfg.truncation(k) as i32;
            for w in cfg.profiles(k) {
                let pts = crate::lattice::lattice_ball(k as usize, w.support_radius + 1.0).unwrap();
                for p in pts.iter().filter(|p| w.weight_at(p) > 0.0) {
                    assert!(p.iter().all(|c| c.abs() <= n), "{p:?} outside n = {n}");
                }
            }
            assert!(truncation_covers(cfg.truncation(k), cfg.profiles(k)));
        }
    }

    #[test]
    fn short_truncation_is_rejected() {
        let mut cfg = small().clone();
        cfg.truncation[0] = 3;
        let pat = empty_pattern(&cfg);
        assert!(matches!(Simulator::new(&pat, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn unit_observation_gives_zero_statistic() {
        let cfg = small();
        let w = &cfg.profiles(1)[5];
        let pts = w.support_points().unwrap();
        let entries = pts.to_indices().into_iter().map(|l| (l, 1e-3)).collect();
        let obs = Observation::new(subset(&[7]), 1e-3, cfg.truncation(1), entries).unwrap();
        assert_eq!(statistic_s(&obs, w).unwrap(), 0.0);
    }

    #[test]
    fn missing_index_is_an_error() {
        let cfg = small();
        let w = &cfg.profiles(1)[5];
        let mut entries: Vec<_> = w.support_points().unwrap().to_indices().into_iter().map(|l| (l, 0.1)).collect();
        entries.pop();
        let obs = Observation::new(subset(&[7]), 1e-3, cfg.truncation(1), entries).unwrap();
        assert!(statistic_s(&obs, w).is_err());
        assert!(statistics(&obs, cfg.profiles(1)).is_err());
    }

    #[test]
    fn observation_rejects_bad_keys() {
        let l = |c: Vec<i32>| FrequencyIndex::new(c).unwrap();
        assert!(Observation::new(subset(&[1]), 1.0, 3, vec![(l(vec![4]), 0.0)]).is_err());
        assert!(Observation::new(subset(&[1]), 1.0, 3, vec![(l(vec![1, 1]), 0.0)]).is_err());
        assert!(Observation::new(subset(&[1]), 1.0, 3, vec![(l(vec![1]), f64::NAN)]).is_err());
        assert!(Observation::new(subset(&[1]), 1.0, 3, vec![(l(vec![1]), 0.0), (l(vec![1]), 1.0)]).is_err());
    }

    #[test]
    fn pointwise_and_shell_aggregated_sums_agree() {
        let cfg = small();
        let pat = empty_pattern(cfg);
        let sim = Simulator::new(&pat, cfg).unwrap();
        for u in [subset(&[3]), subset(&[4, 9])] {
            let obs = sim.observe(&u, 11, 0).unwrap();
            let all = statistics(&obs, cfg.profiles(u.k() as u32)).unwrap();
            for (w, s) in cfg.profiles(u.k() as u32).iter().zip(&all) {
                assert_relative_eq!(statistic_s(&obs, w).unwrap(), *s, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn observations_are_reproducible() {
        let cfg = small();
        let pat = build_pattern(&cfg.dim, PatternMode::Explicit(vec![
            ComponentSpec::new(subset(&[1]), vec![1]).unwrap(),
        ]))
        .unwrap();
        let us = vec![subset(&[1]), subset(&[2, 5])];
        let a = simulate_observations(&pat, cfg, us.clone(), 5).unwrap();
        let b = simulate_observations(&pat, cfg, us.clone(), 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_observations(&pat, cfg, us, 6).unwrap();
        assert_ne!(a[0].values(), c[0].values());
        let sim = Simulator::new(&pat, cfg).unwrap();
        for engine in [Engine::Shell, Engine::Coordinate] {
            let x = sim.evaluate(&[subset(&[1]), subset(&[2])], 3, 4, engine).unwrap();
            let y = sim.evaluate(&[subset(&[2]), subset(&[1])], 3, 4, engine).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn inactive_observation_is_pure_noise() {
        let cfg = small();
        let pat = empty_pattern(cfg);
        let sim = Simulator::new(&pat, cfg).unwrap();
        let mut xs = Vec::new();
        let mut cycle = 0;
        while xs.len() < 100_000 {
            let obs = sim.observe(&subset(&[5, 6]), 1, cycle).unwrap();
            xs.extend(obs.values().iter().map(|x| x / cfg.dim.epsilon));
            cycle += 1;
        }
        let (mean, var) = mean_var(&xs);
        assert!(mean.abs() < 3.3 / (xs.len() as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn active_observation_centres_on_coefficients() {
        let cfg = small();
        let comp = ComponentSpec::new(subset(&[1, 2]), vec![1, 2]).unwrap();
        let pat = build_pattern(&cfg.dim, PatternMode::Explicit(vec![comp.clone()])).unwrap();
        let sim = Simulator::new(&pat, cfg).unwrap();
        let obs = sim.observe(&subset(&[1, 2]), 9, 0).unwrap();
        let quad = QuadratureSpec::default();
        for (l, x) in obs.iter().step_by(37) {
            let theta = crate::signal_bank::product_coeff(&comp, l, &quad).unwrap();
            assert!((x - theta).abs() < 6.0 * cfg.dim.epsilon, "{l:?}");
        }
    }

    #[test]
    fn null_moments_are_zero_and_one() {
        let cfg = small();
        let pat = empty_pattern(cfg);
        let sim = Simulator::new(&pat, cfg).unwrap();
        let u = subset(&[17]);
        let s: Vec<f64> = (0..100_000)
            .map(|c| sim.statistics(&u, 2, c, Engine::Shell).unwrap()[10])
            .collect();
        let (mean, var) = mean_var(&s);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn null_moments_agree_with_simulator() {
        let w = &small().profiles(1)[10];
        let (mean, var) = null_moments(w, 50_000, 4).unwrap();
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_eq!(null_moments(w, 50_000, 4).unwrap(), (mean, var));
        assert!(null_moments(w, 1, 4).is_err());
    }

    #[test]
    fn engines_share_the_null_law() {
        let cfg = small();
        let pat = empty_pattern(cfg);
        let sim = Simulator::new(&pat, cfg).unwrap();
        let u = subset(&[2, 3]);
        let draw = |e| -> Vec<f64> { (0..4000).map(|c| sim.statistics(&u, 8, c, e).unwrap()[3]).collect() };
        let (m1, v1) = mean_var(&draw(Engine::Coordinate));
        let (m2, v2) = mean_var(&draw(Engine::Shell));
        let se = (2.0 / 4000f64).sqrt();
        assert!((m1 - m2).abs() < 4.0 * se, "{m1} vs {m2}");
        assert!((v1 - v2).abs() < 0.15, "{v1} vs {v2}");
    }

    #[test]
    fn signal_mean_matches_moment_formula() {
        let cfg = small();
        let table = toy_table(2e-3);
        let pat = table_pattern(cfg, table.clone());
        let sim = Simulator::new(&pat, cfg).unwrap();
        let u = subset(&[1]);
        let j = 6;
        let w = &cfg.profiles(1)[j];
        let expected: f64 = table
            .entries
            .iter()
            .map(|(l, t)| w.weight_at(l.coords()) * (t / cfg.dim.epsilon).powi(2))
            .sum();
        for engine in [Engine::Shell, Engine::Coordinate] {
            let s: Vec<f64> = (0..4000).map(|c| sim.statistics(&u, 4, c, engine).unwrap()[j]).collect();
            let (mean, var) = mean_var(&s);
            let se = (var / s.len() as f64).sqrt();
            assert!((mean - expected).abs() < 3.0 * se, "{engine:?}: {mean} vs {expected} (se {se})");
        }
    }

    #[test]
    fn shell_engine_mean_matches_pointwise_product_signal() {
        let cfg = small();
        let comp = ComponentSpec::new(subset(&[1, 2]), vec![4, 6]).unwrap();
        let pat = build_pattern(&cfg.dim, PatternMode::Explicit(vec![comp.clone()])).unwrap();
        let sim = Simulator::new(&pat, cfg).unwrap();
        let quad = QuadratureSpec::default();
        let j = 2;
        let w = &cfg.profiles(2)[j];
        let expected: f64 = w
            .support_points()
            .unwrap()
            .iter()
            .map(|l| {
                let th = crate::signal_bank::product_coeff(&comp, l, &quad).unwrap();
                w.weight_at(l) * (th / cfg.dim.epsilon).powi(2)
            })
            .sum();
        let s: Vec<f64> = (0..3000)
            .map(|c| sim.statistics(&subset(&[1, 2]), 6, c, Engine::Shell).unwrap()[j])
            .collect();
        let (mean, var) = mean_var(&s);
        let se = (var / s.len() as f64).sqrt();
        assert!(expected > 10.0, "{expected}");
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn planted_table_is_selected() {
        let cfg = small();
        let t = cfg.threshold(1);
        // scale the toy table so that its mean statistic is about 10 t at the first grid point
        let w = &cfg.profiles(1)[0];
        let base = toy_table(1.0);
        let unit: f64 = base
            .entries
            .iter()
            .map(|(l, th)| w.weight_at(l.coords()) * (th / cfg.dim.epsilon).powi(2))
            .sum();
        let table = toy_table((10.0 * t / unit).sqrt());
        let pat = table_pattern(cfg, table);
        let sim = Simulator::new(&pat, cfg).unwrap();
        for engine in [Engine::Shell, Engine::Coordinate] {
            let res = sim.evaluate(&[subset(&[1]), subset(&[2])], 1, 0, engine).unwrap();
            assert_eq!(res.eta_hat(&subset(&[1])), Some(true));
            assert_eq!(res.eta_hat(&subset(&[2])), Some(false));
            let d = &res.decisions[0];
            let best = d.statistics.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(d.statistics[d.argmax.unwrap()], best);
            assert!(best > t);
        }
    }

    #[test]
    fn empty_grid_selects_nothing() {
        let cfg = config(50, 1, 1e-3, 0);
        assert!(cfg.threshold(1).is_infinite());
        let pat = table_pattern(&cfg, toy_table(1.0));
        let obs = Observation::new(subset(&[1]), 1e-3, 10, vec![(FrequencyIndex::new(vec![1]).unwrap(), 5.0)]).unwrap();
        let res = select(vec![obs], &cfg).unwrap();
        assert_eq!(res.selected_count(), 0);
        assert!(res.decisions[0].statistics.is_empty());
        let _ = pat;
    }

    #[test]
    fn select_matches_simulator() {
        let cfg = small();
        let pat = table_pattern(cfg, toy_table(3e-3));
        let us = vec![subset(&[1]), subset(&[2]), subset(&[1, 2])];
        let obs = simulate_observations(&pat, cfg, us.clone(), 21).unwrap();
        let a = select(obs, cfg).unwrap();
        let b = Simulator::new(&pat, cfg).unwrap().evaluate(&us, 21, 0, Engine::Coordinate).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn null_false_positive_rate_at_published_scale() {
        let cfg = config(50, 1, 5e-5, 20);
        let pat = empty_pattern(&cfg);
        let sim = Simulator::new(&pat, &cfg).unwrap();
        let universe: Vec<Subset> = (1..=50).map(|i| subset(&[i])).collect();
        let mut hits = 0;
        let mut total = 0;
        for cycle in 0..200 {
            hits += sim.evaluate(&universe, 99, cycle, Engine::Shell).unwrap().selected_count();
            total += universe.len();
        }
        assert!(hits as f64 / total as f64 <= 1e-3, "{hits} of {total}");
    }

    #[test]
    fn tail_audit_behaviour() {
        // the bounds need T · max ω small, which takes the wide published-scale supports
        let cfg = config(50, 1, 5e-5, 20);
        let w = &cfg.profiles(1)[10];
        let a = tail_bound_audit(3.0, 200_000, 1, w, None).unwrap();
        assert!(!a.regime_warning, "{a:?}");
        assert!(a.exceedance <= (-0.5 * 9.0 * 0.8f64).exp(), "{a:?}");
        assert!(a.lower_exceedance.is_none());
        let half = tail_bound_audit(0.0, 100_000, 2, w, None).unwrap();
        assert!((half.exceedance - 0.5).abs() < 0.01, "{half:?}");
        let b = tail_bound_audit(6.0, 10, 1, w, None).unwrap();
        assert!(b.reference <= a.reference.powi(2) * (1.0 + 1e-12));
        let unit: f64 = toy_table(1.0)
            .entries
            .iter()
            .map(|(l, th)| w.weight_at(l.coords()) * (th / cfg.dim.epsilon).powi(2))
            .sum();
        let sig = tail_bound_audit(3.0, 50_000, 3, w, Some(&toy_table((5.0 / unit).sqrt()))).unwrap();
        assert_relative_eq!(sig.signal_mean.unwrap(), 5.0, max_relative = 1e-12);
        assert!(sig.lower_exceedance.unwrap() <= (-0.5 * 9.0 * 0.8f64).exp(), "{sig:?}");
        assert_eq!(tail_bound_audit(3.0, 1000, 7, w, None).unwrap(), tail_bound_audit(3.0, 1000, 7, w, None).unwrap());
    }

    #[test]
    fn tail_audit_flags_regime() {
        let cfg = small();
        let w = &cfg.profiles(1)[19];
        let big = 1.0 / w.max_weight();
        assert!(tail_bound_audit(big, 10, 1, w, None).unwrap().regime_warning);
        assert!(!tail_bound_audit(0.01 * big, 10, 1, w, None).unwrap().regime_warning);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_one_coordinate_keeps_selection(seed in 0u64..1000, pick in 0usize..10_000, bump in 0.0f64..50.0) {
            let cfg = small();
            let pat = table_pattern(cfg, toy_table(1.5e-3));
            let sim = Simulator::new(&pat, cfg).unwrap();
            let obs = sim.observe(&subset(&[1]), seed, 0).unwrap();
            let before = select(vec![obs.clone()], cfg).unwrap().decisions[0].selected;
            let i = pick % obs.len();
            let mut entries: Vec<_> = obs.points().to_indices().into_iter().zip(obs.values().iter().copied()).collect();
            let x = entries[i].1;
            entries[i].1 = x.signum() * (x.abs() + bump * cfg.dim.epsilon);
            let raised = Observation::new(obs.owner.clone(), obs.epsilon, obs.truncation_n, entries).unwrap();
            let after = select(vec![raised], cfg).unwrap().decisions[0].selected;
            prop_assert!(!before || after);
        }
    }
}
