//! Subsets of `{1, ..., d}` and the frequency lattice of all-nonzero integer points.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::index;

use crate::error::{domain, Error, Result};
use crate::numeric::ln_gamma;
use crate::rng;

/// Default point budget for lattice enumeration.
pub const DEFAULT_POINT_BUDGET: u64 = 10_000_000;

/// A `k`-element subset of `{1, ..., d}`, stored as strictly increasing 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset {
    indices: Vec<u32>,
}

impl Subset {
    pub fn new(indices: Vec<u32>, d: u32) -> Result<Self> {
        if indices.is_empty() {
            return domain("subset must contain at least one index");
        }
        if indices[0] < 1 || *indices.last().unwrap() > d {
            return domain(format!("subset indices {indices:?} must lie in [1, {d}]"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return domain(format!("subset indices {indices:?} must be strictly increasing"));
        }
        Ok(Subset { indices })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, j: u32) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, j) in self.indices.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str("}")
    }
}

/// A lattice point with every coordinate nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrequencyIndex {
    coords: Vec<i32>,
}

impl FrequencyIndex {
    pub fn new(coords: Vec<i32>) -> Result<Self> {
        if coords.is_empty() {
            return domain("frequency index needs at least one coordinate");
        }
        if coords.contains(&0) {
            return domain(format!("frequency index {coords:?} has a zero coordinate"));
        }
        Ok(FrequencyIndex { coords })
    }

    /// Embeds into the lattice of `owner`, checking the arity.
    pub fn for_subset(coords: Vec<i32>, owner: &Subset) -> Result<Self> {
        if coords.len() != owner.k() {
            return domain(format!(
                "frequency index has {} coordinates, subset {owner} has order {}",
                coords.len(),
                owner.k()
            ));
        }
        Self::new(coords)
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }

    pub fn norm_sq(&self) -> u64 {
        norm_sq(&self.coords)
    }
}

#[inline]
pub(crate) fn norm_sq(coords: &[i32]) -> u64 {
    coords.iter().map(|&c| (c as i64 * c as i64) as u64).sum()
}

/// Problem dimensions: ambient dimension, maximal interaction order,
/// sparsity index, smoothness and noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionSpec {
    pub d: u32,
    pub s: u32,
    pub beta: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

impl DimensionSpec {
    pub fn new(d: u32, s: u32, beta: f64, sigma: f64, epsilon: f64) -> Result<Self> {
        let spec = DimensionSpec {
            d,
            s,
            beta,
            sigma,
            epsilon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 1 || self.s > self.d {
            return domain(format!("need 1 <= s <= d, got s = {}, d = {}", self.s, self.d));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return domain(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return domain(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return domain(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// `ln C(d, k)`.
pub fn log_binomial(d: u64, k: u64) -> Result<f64> {
    if k > d {
        return domain(format!("log_binomial: k = {k} outside [0, {d}]"));
    }
    let k = k.min(d - k);
    if k <= 64 {
        let mut acc = 0.0;
        for i in 0..k {
            acc += ((d - i) as f64 / (i + 1) as f64).ln();
        }
        return Ok(acc);
    }
    Ok(ln_gamma(d as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((d - k) as f64 + 1.0))
}

/// Exact `C(d, k)`, or `None` on overflow.
pub fn binomial(d: u64, k: u64) -> Option<u128> {
    if k > d {
        return Some(0);
    }
    let k = k.min(d - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((d - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Number of active order-`k` components, `round(C(d, k)^(1 - beta))`, at least 1.
pub fn active_count(d: u32, k: u32, beta: f64) -> Result<u64> {
    if k < 1 || k > d {
        return domain(format!("active_count: need 1 <= k <= d, got k = {k}, d = {d}"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return domain(format!("active_count: beta must lie in (0, 1], got {beta}"));
    }
    let lc = log_binomial(d as u64, k as u64)?;
    let n = ((1.0 - beta) * lc).exp().round();
    Ok((n as u64).max(1))
}

/// Points of the all-nonzero lattice, stored flat with stride `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticePoints {
    k: usize,
    coords: Vec<i32>,
}

impl LatticePoints {
    /// Sorts and deduplicates `points`; every point must have `k` nonzero coordinates.
    pub fn from_points(k: usize, mut points: Vec<Vec<i32>>) -> Result<Self> {
        if k < 1 {
            return domain("lattice points need k >= 1");
        }
        if let Some(bad) = points.iter().find(|p| p.len() != k || p.contains(&0)) {
            return domain(format!("{bad:?} is not a point of the order-{k} lattice"));
        }
        points.sort_unstable();
        points.dedup();
        Ok(LatticePoints {
            k,
            coords: points.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[i32] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, i32> {
        self.coords.chunks_exact(self.k)
    }

    /// Position of `point` (requires lexicographic order, which `lattice_ball` guarantees).
    pub fn position(&self, point: &[i32]) -> Option<usize> {
        if point.len() != self.k {
            return None;
        }
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.get(mid).cmp(point) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    pub fn to_indices(&self) -> Vec<FrequencyIndex> {
        self.iter()
            .map(|c| FrequencyIndex { coords: c.to_vec() })
            .collect()
    }
}

/// Volume of the unit ball in `R^k`.
fn unit_ball_volume(k: usize) -> f64 {
    let kf = k as f64;
    (0.5 * kf * std::f64::consts::PI.ln() - ln_gamma(0.5 * kf + 1.0)).exp()
}

/// Points of `Z̊^k` with Euclidean norm strictly below `radius`, in lexicographic order.
pub fn lattice_ball(k: usize, radius: f64) -> Result<LatticePoints> {
    lattice_ball_with_budget(k, radius, None, DEFAULT_POINT_BUDGET)
}

/// As [`lattice_ball`], optionally clipped to the box `max |l_j| <= trunc`,
/// failing when the predicted count exceeds `budget`.
pub fn lattice_ball_with_budget(
    k: usize,
    radius: f64,
    trunc: Option<u32>,
    budget: u64,
) -> Result<LatticePoints> {
    if k < 1 {
        return domain("lattice_ball: k must be at least 1");
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return domain(format!("lattice_ball: radius must be positive, got {radius}"));
    }
    let predicted = unit_ball_volume(k) * radius.powi(k as i32);
    if predicted > budget as f64 {
        return Err(Error::Capacity {
            what: "lattice_ball",
            needed: predicted.min(u64::MAX as f64) as u64,
            cap: budget,
        });
    }
    let mut coords = Vec::new();
    for_each_ball_point(k, radius, trunc, |p| coords.extend_from_slice(p));
    Ok(LatticePoints { k, coords })
}

/// Multiplicity of each squared norm among points of `Z̊^k`.
///
/// Entry `q` of the result is the number of points with `Σ l_j² = q`, for
/// `q < q_limit`, counting only points with `max |l_j| <= trunc` when given.
pub fn shell_multiplicities(k: usize, q_limit: u64, trunc: Option<u32>) -> Vec<u64> {
    let q_limit = q_limit as usize;
    let mut counts = vec![0u64; q_limit];
    if q_limit == 0 || k == 0 {
        return counts;
    }
    let mut one_d = vec![0u64; q_limit];
    let mut l = 1usize;
    while l * l < q_limit && trunc.is_none_or(|t| l as u32 <= t) {
        one_d[l * l] = 2;
        l += 1;
    }
    counts.copy_from_slice(&one_d);
    let squares: Vec<usize> = (0..q_limit).filter(|&q| one_d[q] > 0).collect();
    for _ in 1..k {
        let mut next = vec![0u64; q_limit];
        for (q, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for &s in &squares {
                if q + s >= q_limit {
                    break;
                }
                next[q + s] += c * 2;
            }
        }
        counts = next;
    }
    counts
}

fn cached_multiplicities(k: usize, q_limit: u64) -> Arc<Vec<u64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<u64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&k) {
        if v.len() as u64 >= q_limit {
            return Arc::clone(v);
        }
    }
    // grow geometrically so repeated small extensions stay cheap
    let current = cache.lock().unwrap().get(&k).map_or(0, |v| v.len() as u64);
    let target = q_limit.max(current.saturating_mul(2)).max(64);
    let table = Arc::new(shell_multiplicities(k, target, None));
    cache.lock().unwrap().insert(k, Arc::clone(&table));
    table
}

/// Nonzero shells `(q, multiplicity)` of [`shell_multiplicities`], in increasing `q`.
///
/// Order 1 is handled sparsely so large radii do not allocate `q_limit` slots;
/// untruncated tables of higher order are memoized per `k`.
pub fn shell_table(k: usize, q_limit: u64, trunc: Option<u32>) -> Vec<(u64, u64)> {
    if k == 1 {
        let mut out = Vec::new();
        let mut l = 1u64;
        while l * l < q_limit && trunc.is_none_or(|t| l <= t as u64) {
            out.push((l * l, 2));
            l += 1;
        }
        return out;
    }
    let dense = match trunc {
        None => cached_multiplicities(k, q_limit),
        Some(_) => Arc::new(shell_multiplicities(k, q_limit, trunc)),
    };
    dense[..q_limit as usize]
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(q, &c)| (q as u64, c))
        .collect()
}

/// Per-shell sums of a product weight `Π_p f_p(l_p)` over `Z̊^k`.
///
/// `factors[p]` holds `(l², f_p(l) + f_p(-l))` pairs, i.e. the one-dimensional
/// weight already folded over the sign of `l`. Entry `q` of the result is
/// `Σ_{Σ l_p² = q} Π_p f_p(l_p)` for `q < q_limit`.
pub fn shell_convolve(factors: &[Vec<(u64, f64)>], q_limit: u64) -> Vec<f64> {
    let q_limit = q_limit as usize;
    let mut acc = vec![0.0; q_limit];
    if factors.is_empty() || q_limit == 0 {
        return acc;
    }
    for &(q, w) in &factors[0] {
        if (q as usize) < q_limit {
            acc[q as usize] += w;
        }
    }
    for f in &factors[1..] {
        let mut next = vec![0.0; q_limit];
        for (q, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for &(s, w) in f {
                let t = q + s as usize;
                if t >= q_limit {
                    break;
                }
                next[t] += a * w;
            }
        }
        acc = next;
    }
    acc
}

/// Calls `visit` on every point of the (optionally box-clipped) ball, in lexicographic order.
pub fn for_each_ball_point<F: FnMut(&[i32])>(k: usize, radius: f64, trunc: Option<u32>, mut visit: F) {
    if k < 1 || !(radius > 0.0) {
        return;
    }
    let mut n = radius.ceil() as i64;
    if let Some(t) = trunc {
        n = n.min(t as i64);
    }
    let n = n as i32;
    let axis: Vec<i32> = (-n..=n).filter(|&v| v != 0).collect();
    let mut current = vec![0i32; k];
    visit_rec(&axis, radius * radius, 0, 0.0, &mut current, &mut visit);
}

fn visit_rec<F: FnMut(&[i32])>(axis: &[i32], r2: f64, depth: usize, acc: f64, current: &mut [i32], visit: &mut F) {
    let k = current.len();
    let remaining = (k - depth - 1) as f64;
    for &v in axis {
        let next = acc + (v as f64) * (v as f64);
        if next + remaining >= r2 {
            continue;
        }
        current[depth] = v;
        if depth + 1 == k {
            visit(current);
        } else {
            visit_rec(axis, r2, depth + 1, next, current, visit);
        }
    }
}

/// How subsets of a given order are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMode {
    /// All `C(d, k)` subsets in lexicographic order.
    Full,
    /// A reproducible uniform sample without replacement, sorted lexicographically.
    Pool { size: u64, seed: u64 },
}

/// Stream of subsets produced by [`enumerate_subsets`].
#[derive(Debug, Clone)]
pub enum SubsetStream {
    Full(LexSubsets),
    Pool(std::vec::IntoIter<Subset>),
}

impl Iterator for SubsetStream {
    type Item = Subset;

    fn next(&mut self) -> Option<Subset> {
        match self {
            SubsetStream::Full(it) => it.next(),
            SubsetStream::Pool(it) => it.next(),
        }
    }
}

/// Lexicographic walk over all `k`-subsets of `{1, ..., d}`.
#[derive(Debug, Clone)]
pub struct LexSubsets {
    d: u32,
    current: Option<Vec<u32>>,
}

impl LexSubsets {
    pub fn new(d: u32, k: u32) -> Self {
        let current = (k >= 1 && k <= d).then(|| (1..=k).collect());
        LexSubsets { d, current }
    }
}

impl Iterator for LexSubsets {
    type Item = Subset;

    fn next(&mut self) -> Option<Subset> {
        let cur = self.current.as_mut()?;
        let out = Subset {
            indices: cur.clone(),
        };
        let k = cur.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            let cap = self.d - (k - 1 - i) as u32;
            if cur[i] < cap {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Streams order-`k` subsets of `{1, ..., d}`.
pub fn enumerate_subsets(d: u32, k: u32, mode: SubsetMode) -> Result<SubsetStream> {
    if k < 1 || k > d {
        return domain(format!("enumerate_subsets: need 1 <= k <= d, got k = {k}, d = {d}"));
    }
    match mode {
        SubsetMode::Full => Ok(SubsetStream::Full(LexSubsets::new(d, k))),
        SubsetMode::Pool { size, seed } => {
            let pool = sample_subsets(d, k, size, seed, &HashSet::new())?;
            Ok(SubsetStream::Pool(pool.into_iter()))
        }
    }
}

/// Uniform sample of `size` distinct order-`k` subsets avoiding `exclude`, sorted.
pub fn sample_subsets(
    d: u32,
    k: u32,
    size: u64,
    seed: u64,
    exclude: &HashSet<Subset>,
) -> Result<Vec<Subset>> {
    if k < 1 || k > d {
        return domain(format!("sample_subsets: need 1 <= k <= d, got k = {k}, d = {d}"));
    }
    let excluded = exclude.iter().filter(|s| s.k() == k as usize).count() as u128;
    let total = binomial(d as u64, k as u64).unwrap_or(u128::MAX);
    let available = total.saturating_sub(excluded);
    if size as u128 > available {
        return domain(format!(
            "pool size {size} exceeds the {available} available subsets of order {k} out of {d}"
        ));
    }
    let mut rng = rng::substream(seed, &[rng::tags::SUBSET_POOL, d as u64, k as u64]);
    let mut out: Vec<Subset> = if (size as u128) * 2 > available {
        // dense regime: enumerate the candidates and pick positions
        let candidates: Vec<Subset> = LexSubsets::new(d, k).filter(|s| !exclude.contains(s)).collect();
        index::sample(&mut rng, candidates.len(), size as usize)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect()
    } else {
        let mut seen: HashSet<Subset> = HashSet::with_capacity(size as usize);
        let mut picked = Vec::with_capacity(size as usize);
        while (picked.len() as u64) < size {
            let mut idx: Vec<u32> = index::sample(&mut rng, d as usize, k as usize)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect();
            idx.sort_unstable();
            let s = Subset { indices: idx };
            if exclude.contains(&s) || !seen.insert(s.clone()) {
                continue;
            }
            picked.push(s);
        }
        picked
    };
    out.sort();
    Ok(out)
}
