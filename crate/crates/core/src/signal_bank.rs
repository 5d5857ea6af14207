//! Test-function library, Fourier analysis on the trigonometric basis and
//! sparse functional-ANOVA patterns.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::{PI, SQRT_2};
use std::io::{self, Write};
use std::sync::{Arc, RwLock};

use crate::error::{domain, Result};
use crate::extremal::sobolev_coeff_sq_from_norm;
use crate::lattice::{active_count, norm_sq, DimensionSpec, FrequencyIndex, Subset};
use crate::numeric::CompensatedSum;
use crate::quadrature::QuadratureSpec;

/// Number of library functions.
pub const G_COUNT: u8 = 9;

/// `g_i(t)` for `i` in `1..=9`.
pub fn eval_g(i: u8, t: f64) -> Result<f64> {
    if !(1..=G_COUNT).contains(&i) {
        return domain(format!("g-function index {i} outside [1, 9]"));
    }
    if !(0.0..=1.0).contains(&t) {
        return domain(format!("g-function argument {t} outside [0, 1]"));
    }
    Ok(g_unchecked(i, t))
}

#[inline]
fn g_unchecked(i: u8, t: f64) -> f64 {
    match i {
        1 => t * t * (2f64.powf(t - 1.0) - (t - 0.5).powi(2)) * t.exp() - 0.5424,
        2 => t * t * (2f64.powf(t - 1.0) - (t - 1.0).powi(5)) - 0.2887,
        3 => 1.5 * t * t * 2f64.powf(t - 1.0) * (15.0 * t).cos() - 0.05011,
        4 => t - 0.5,
        5 => 5.0 * (t - 0.7).powi(3) + 0.29,
        6 => 2.0 * (t - 0.4).powi(2) - 0.1867,
        7 => 0.7 * (t * t - 0.1).powi(3) - 0.0643,
        8 => 10.0 * (t * t - 0.5).powi(5) + 0.068,
        9 => 3.0 * (t - 0.8).powi(4) - 0.1968,
        _ => unreachable!("g index checked by caller"),
    }
}

/// Basis function `φ_l(t)`: `1`, `√2 cos(2πlt)` for `l > 0`, `√2 sin(2π|l|t)` for `l < 0`.
#[inline]
pub fn basis(l: i64, t: f64) -> f64 {
    match l.cmp(&0) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => SQRT_2 * (2.0 * PI * l as f64 * t).cos(),
        std::cmp::Ordering::Less => SQRT_2 * (2.0 * PI * (-l) as f64 * t).sin(),
    }
}

/// `∫_0^1 g_i(t) φ_l(t) dt`.
pub fn fourier_coeff_1d(i: u8, l: i64, quad: &QuadratureSpec) -> Result<f64> {
    if !(1..=G_COUNT).contains(&i) {
        return domain(format!("g-function index {i} outside [1, 9]"));
    }
    let needed = 2 * l.unsigned_abs() + 16;
    if quad.nodes_for(l) < needed {
        return domain(format!(
            "quadrature has {} nodes, frequency {l} needs at least {needed}",
            quad.nodes_for(l)
        ));
    }
    Ok(quad.integrate(l, |t| g_unchecked(i, t) * basis(l, t)))
}

/// Memoized one-dimensional coefficients keyed by `(function, frequency, rule)`.
#[derive(Debug, Default)]
pub struct CoefficientCache {
    map: RwLock<HashMap<(u8, i64, QuadratureSpec), f64>>,
}

impl CoefficientCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, i: u8, l: i64, quad: &QuadratureSpec) -> Result<f64> {
        if let Some(&v) = self.map.read().unwrap().get(&(i, l, *quad)) {
            return Ok(v);
        }
        let v = fourier_coeff_1d(i, l, quad)?;
        self.map.write().unwrap().insert((i, l, *quad), v);
        Ok(v)
    }

    /// Coefficients for `l = -n..=n`, index `l + n`.
    pub fn dense(&self, i: u8, n: u32, quad: &QuadratureSpec) -> Result<Vec<f64>> {
        let n = n as i64;
        (-n..=n).map(|l| self.get(i, l, quad)).collect()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of an orthogonality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthogonalityCheck {
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `|∫_0^1 g_i|` against `tol`.
pub fn orthogonality_check(i: u8, tol: f64) -> Result<OrthogonalityCheck> {
    if !(tol > 0.0) {
        return domain(format!("orthogonality tolerance must be positive, got {tol}"));
    }
    let residual = fourier_coeff_1d(i, 0, &QuadratureSpec::default())?.abs();
    Ok(OrthogonalityCheck {
        residual,
        tol,
        pass: residual <= tol,
    })
}

/// One component `amplitude · Π_p g_{factor_ids[p]}(t_{subset[p]})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub subset: Subset,
    pub factor_ids: Vec<u8>,
    pub amplitude: f64,
    /// User-supplied coefficients; when set, `factor_ids` is empty.
    pub table: Option<Arc<CoefficientTable>>,
}

impl ComponentSpec {
    pub fn new(subset: Subset, factor_ids: Vec<u8>) -> Result<Self> {
        if factor_ids.len() != subset.k() {
            return domain(format!(
                "component on {subset} needs {} factors, got {}",
                subset.k(),
                factor_ids.len()
            ));
        }
        if let Some(bad) = factor_ids.iter().find(|i| !(1..=G_COUNT).contains(*i)) {
            return domain(format!("factor g{bad} outside g1..g9"));
        }
        Ok(ComponentSpec {
            subset,
            factor_ids,
            amplitude: 1.0,
            table: None,
        })
    }

    /// Component given directly by its Fourier coefficients.
    pub fn from_table(table: CoefficientTable) -> Result<Self> {
        if let Some((l, _)) = table.entries.iter().find(|(_, v)| !v.is_finite()) {
            return domain(format!("non-finite coefficient at {:?}", l.coords()));
        }
        Ok(ComponentSpec {
            subset: table.owner.clone(),
            factor_ids: Vec::new(),
            amplitude: 1.0,
            table: Some(Arc::new(table)),
        })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn k(&self) -> usize {
        self.subset.k()
    }
}

/// `amplitude · Π_p (g_{factor_p}, φ_{l_p})`.
pub fn product_coeff(spec: &ComponentSpec, l: &[i32], quad: &QuadratureSpec) -> Result<f64> {
    product_coeff_cached(spec, l, quad, &CoefficientCache::new())
}

pub fn product_coeff_cached(
    spec: &ComponentSpec,
    l: &[i32],
    quad: &QuadratureSpec,
    cache: &CoefficientCache,
) -> Result<f64> {
    if l.len() != spec.k() {
        return domain(format!(
            "frequency index of order {} does not fit component on {}",
            l.len(),
            spec.subset
        ));
    }
    if let Some(table) = &spec.table {
        let key = FrequencyIndex::new(l.to_vec())?;
        return Ok(spec.amplitude * table.entries.get(&key).copied().unwrap_or(0.0));
    }
    let mut acc = spec.amplitude;
    for (&i, &lp) in spec.factor_ids.iter().zip(l) {
        acc *= cache.get(i, lp as i64, quad)?;
    }
    Ok(acc)
}

/// Dense per-factor coefficient arrays for fast evaluation on the box `[-n, n]^k`.
#[derive(Debug, Clone)]
pub struct ProductCoefficients {
    n: u32,
    amplitude: f64,
    factors: Vec<Vec<f64>>,
}

impl ProductCoefficients {
    pub fn new(spec: &ComponentSpec, n: u32, quad: &QuadratureSpec, cache: &CoefficientCache) -> Result<Self> {
        if spec.table.is_some() {
            return domain(format!("component on {} is tabulated, not a product", spec.subset));
        }
        let factors = spec
            .factor_ids
            .iter()
            .map(|&i| cache.dense(i, n, quad))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductCoefficients {
            n,
            amplitude: spec.amplitude,
            factors,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Coefficient at `l`; zero outside the box.
    #[inline]
    pub fn at(&self, l: &[i32]) -> f64 {
        self.at_with_amplitude(self.amplitude, l)
    }

    /// As [`ProductCoefficients::at`] with another amplitude.
    #[inline]
    pub fn at_with_amplitude(&self, amplitude: f64, l: &[i32]) -> f64 {
        let n = self.n as i64;
        let mut acc = amplitude;
        for (f, &lp) in self.factors.iter().zip(l) {
            let lp = lp as i64;
            if lp.abs() > n {
                return 0.0;
            }
            acc *= f[(lp + n) as usize];
        }
        acc
    }

    /// Per factor, `(l², θ_p(l)² + θ_p(-l)²)` for `l = 1..=n`, without the amplitude.
    pub fn folded_energy(&self) -> Vec<Vec<(u64, f64)>> {
        let n = self.n as usize;
        self.factors
            .iter()
            .map(|f| {
                (1..=n)
                    .map(|l| ((l * l) as u64, f[n + l] * f[n + l] + f[n - l] * f[n - l]))
                    .collect()
            })
            .collect()
    }
}

/// Fourier coefficients of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub owner: Subset,
    pub entries: BTreeMap<FrequencyIndex, f64>,
}

impl CoefficientTable {
    pub fn new(owner: Subset) -> Self {
        CoefficientTable {
            owner,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, l: FrequencyIndex, theta: f64) -> Result<()> {
        if l.k() != self.owner.k() {
            return domain(format!("index {:?} does not fit subset {}", l.coords(), self.owner));
        }
        self.entries.insert(l, theta);
        Ok(())
    }

    /// Tabulates a component on the box `[-n, n]^k`.
    pub fn from_component(spec: &ComponentSpec, n: u32, quad: &QuadratureSpec, cache: &CoefficientCache) -> Result<Self> {
        let coeffs = ProductCoefficients::new(spec, n, quad, cache)?;
        let mut table = CoefficientTable::new(spec.subset.clone());
        let k = spec.k();
        let axis: Vec<i32> = (-(n as i32)..=n as i32).filter(|&v| v != 0).collect();
        let mut idx = vec![0usize; k];
        if axis.is_empty() {
            return Ok(table);
        }
        loop {
            let coords: Vec<i32> = idx.iter().map(|&i| axis[i]).collect();
            let v = coeffs.at(&coords);
            table.entries.insert(FrequencyIndex::new(coords)?, v);
            let mut p = k;
            loop {
                if p == 0 {
                    return Ok(table);
                }
                p -= 1;
                idx[p] += 1;
                if idx[p] < axis.len() {
                    break;
                }
                idx[p] = 0;
            }
        }
    }

    /// Text records `subset;l_1 ... l_k;θ`, one per line.
    pub fn write_records<W: Write>(&self, mut out: W) -> io::Result<()> {
        let owner: Vec<String> = self.owner.indices().iter().map(|j| j.to_string()).collect();
        let owner = owner.join(" ");
        for (l, theta) in &self.entries {
            let coords: Vec<String> = l.coords().iter().map(|c| c.to_string()).collect();
            writeln!(out, "{owner};{};{theta:e}", coords.join(" "))?;
        }
        Ok(())
    }
}

/// `Σ θ²_ℓ c²_ℓ` over the table.
pub fn sobolev_norm(table: &CoefficientTable, sigma: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for (l, &theta) in &table.entries {
        acc.add(theta * theta * sobolev_coeff_sq_from_norm(norm_sq(l.coords()), sigma));
    }
    acc.value()
}

/// Truncated Sobolev semi-norm of a product component on the box `[-n, n]^k`,
/// without materializing the table.
pub fn component_sobolev_norm(
    spec: &ComponentSpec,
    n: u32,
    sigma: f64,
    quad: &QuadratureSpec,
    cache: &CoefficientCache,
) -> Result<f64> {
    if let Some(table) = &spec.table {
        let a2 = spec.amplitude * spec.amplitude;
        let inside = table
            .entries
            .iter()
            .filter(|(l, _)| l.coords().iter().all(|c| c.unsigned_abs() <= n))
            .map(|(l, &t)| a2 * t * t * sobolev_coeff_sq_from_norm(l.norm_sq(), sigma));
        return Ok(inside.collect::<CompensatedSum>().value());
    }
    let coeffs = ProductCoefficients::new(spec, n, quad, cache)?;
    let k = spec.k();
    let axis: Vec<i32> = (-(n as i32)..=n as i32).filter(|&v| v != 0).collect();
    let mut acc = CompensatedSum::new();
    let mut idx = vec![0usize; k];
    let mut coords = vec![0i32; k];
    if axis.is_empty() {
        return Ok(0.0);
    }
    loop {
        for (c, &i) in coords.iter_mut().zip(&idx) {
            *c = axis[i];
        }
        let theta = coeffs.at(&coords);
        acc.add(theta * theta * sobolev_coeff_sq_from_norm(norm_sq(&coords), sigma));
        let mut p = k;
        loop {
            if p == 0 {
                return Ok(acc.value());
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < axis.len() {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// Active components per order and the induced indicators `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    pub d: u32,
    pub s: u32,
    /// `components[k - 1]` lists the active order-`k` components.
    pub components: Vec<Vec<ComponentSpec>>,
}

impl SparsityPattern {
    pub fn actives(&self, k: u32) -> &[ComponentSpec] {
        self.components
            .get(k as usize - 1)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn component(&self, subset: &Subset) -> Option<&ComponentSpec> {
        self.actives(subset.k() as u32)
            .iter()
            .find(|c| &c.subset == subset)
    }

    /// `η_u`.
    pub fn eta(&self, subset: &Subset) -> bool {
        self.component(subset).is_some()
    }

    pub fn active_subsets(&self, k: u32) -> HashSet<Subset> {
        self.actives(k).iter().map(|c| c.subset.clone()).collect()
    }

    pub fn total_active(&self) -> usize {
        self.components.iter().map(|v| v.len()).sum()
    }

    /// Copy with the amplitude of the component on `subset` multiplied by `alpha`.
    pub fn attenuated(&self, subset: &Subset, alpha: f64) -> Result<Self> {
        let mut out = self.clone();
        let comp = out
            .components
            .get_mut(subset.k() - 1)
            .and_then(|v| v.iter_mut().find(|c| &c.subset == subset));
        match comp {
            Some(c) => {
                c.amplitude *= alpha;
                Ok(out)
            }
            None => domain(format!("subset {subset} is not active in the pattern")),
        }
    }
}

/// How a pattern is built.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternMode {
    /// The published experiment for `d ∈ {50, 100, 200}`, `s = 4`, `β = 0.87`.
    PaperDefault,
    /// Any list of components.
    Explicit(Vec<ComponentSpec>),
}

pub fn build_pattern(spec: &DimensionSpec, mode: PatternMode) -> Result<SparsityPattern> {
    spec.validate()?;
    let list = match mode {
        PatternMode::PaperDefault => {
            if ![50, 100, 200].contains(&spec.d) || spec.s != 4 || (spec.beta - 0.87).abs() > 1e-12 {
                return domain(format!(
                    "paper_default pattern exists only for d in {{50, 100, 200}}, s = 4, beta = 0.87 (got d = {}, s = {}, beta = {}); use explicit mode",
                    spec.d, spec.s, spec.beta
                ));
            }
            paper_components(spec.d)?
        }
        PatternMode::Explicit(list) => list,
    };
    let mut components: Vec<Vec<ComponentSpec>> = vec![Vec::new(); spec.s as usize];
    for c in list {
        let k = c.k();
        if k > spec.s as usize {
            return domain(format!("component on {} exceeds order s = {}", c.subset, spec.s));
        }
        if c.subset.indices().last().copied().unwrap_or(0) > spec.d {
            return domain(format!("component on {} exceeds dimension d = {}", c.subset, spec.d));
        }
        if components[k - 1].iter().any(|o| o.subset == c.subset) {
            return domain(format!("subset {} listed twice", c.subset));
        }
        components[k - 1].push(c);
    }
    Ok(SparsityPattern {
        d: spec.d,
        s: spec.s,
        components,
    })
}

fn comp(d: u32, indices: &[u32], factors: &[u8]) -> Result<ComponentSpec> {
    ComponentSpec::new(Subset::new(indices.to_vec(), d)?, factors.to_vec())
}

fn paper_components(d: u32) -> Result<Vec<ComponentSpec>> {
    let mut out = vec![comp(d, &[1], &[1])?, comp(d, &[2], &[2])?];
    for i in 1..=3u32 {
        out.push(comp(d, &[i, i + 1], &[i as u8, i as u8 + 1])?);
    }
    let n3 = match d {
        50 => 4,
        100 => 5,
        _ => 6,
    };
    for i in 1..=n3 {
        out.push(comp(d, &[1, 2, i + 2], &[1, 2, i as u8 + 2])?);
    }
    for i in 1..=5u32 {
        out.push(comp(d, &[1, 2, 3, i + 3], &[1, 2, 3, i as u8 + 3])?);
    }
    if d >= 100 {
        for i in 6..=7u32 {
            out.push(comp(d, &[1, 2, 4, i + 2], &[1, 2, 4, i as u8 + 2])?);
        }
    }
    if d == 200 {
        for i in 8..=10u32 {
            out.push(comp(d, &[1, 2, 5, i - 1], &[1, 2, 5, i as u8 - 1])?);
        }
    }
    Ok(out)
}

/// Active counts per order prescribed by the sparsity rule, for comparison
/// with a built pattern.
pub fn rule_counts(spec: &DimensionSpec) -> Result<Vec<u64>> {
    (1..=spec.s).map(|k| active_count(spec.d, k, spec.beta)).collect()
}
