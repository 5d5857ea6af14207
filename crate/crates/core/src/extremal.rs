//! Extremal sequences of the ellipsoid-shell problem, the functional `a(r)`,
//! test weights and the calibration of radii on a grid of sparsity indices.
//!
//! The extremal squared amplitudes depend on a lattice point only through its
//! squared norm `q = Σ l_j²`, so profiles are stored per shell: one value per
//! distinct `q` together with the number of lattice points on that shell.
//! Point-level views are produced on demand by enumerating the lattice ball.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::lattice::{self, log_binomial, norm_sq, LatticePoints, DEFAULT_POINT_BUDGET};
use crate::numeric::{bisect, compensated_sum, ln_gamma, CompensatedSum};

/// Relative residual the radius solver guarantees on `a(r*)`.
pub const CALIBRATION_TOL: f64 = 1e-8;

/// One lattice shell `Σ l_j² = norm_sq` carrying a per-point value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub norm_sq: u64,
    pub multiplicity: u64,
    pub value: f64,
}

/// `c_ℓ = (Σ_j (2π l_j)²)^{σ/2}`.
pub fn sobolev_coeff(coords: &[i32], sigma: f64) -> Result<f64> {
    if coords.is_empty() || coords.contains(&0) {
        return domain(format!("sobolev_coeff: {coords:?} has a zero coordinate"));
    }
    Ok(sobolev_coeff_sq_from_norm(norm_sq(coords), sigma).sqrt())
}

#[inline]
pub(crate) fn sobolev_coeff_sq_from_norm(q: u64, sigma: f64) -> f64 {
    (4.0 * PI * PI * q as f64).powf(sigma)
}

/// Right end of the admissible radius interval, `(2π)^{-σ} k^{-σ/2}`.
pub fn admissible_radius(k: usize, sigma: f64) -> f64 {
    (2.0 * PI).powf(-sigma) * (k as f64).powf(-sigma / 2.0)
}

/// Radius of the extremal support, `(1 + 4σ/k)^{1/(2σ)} / (2π r^{1/σ})`.
pub fn support_radius(r: f64, k: usize, sigma: f64) -> f64 {
    let kf = k as f64;
    (1.0 + 4.0 * sigma / kf).powf(1.0 / (2.0 * sigma)) / (2.0 * PI * r.powf(1.0 / sigma))
}

fn check_radius(r: f64, k: usize, sigma: f64) -> Result<()> {
    if k < 1 {
        return domain("order k must be at least 1");
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return domain(format!("sigma must be positive, got {sigma}"));
    }
    let upper = admissible_radius(k, sigma);
    if !(r > 0.0 && r < upper) {
        return domain(format!(
            "radius r = {r} outside the admissible interval (0, {upper}) = (0, (2π)^-σ k^-σ/2) for k = {k}, σ = {sigma}"
        ));
    }
    Ok(())
}

/// Extremal squared amplitudes `θ*²_ℓ(r)` on their support.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalProfile {
    pub r: f64,
    pub k: usize,
    pub sigma: f64,
    pub support_radius: f64,
    shells: Vec<Shell>,
}

impl ExtremalProfile {
    /// Shells with positive `θ*²`, increasing in squared norm.
    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    /// `θ*²` at a lattice point (zero off the support).
    pub fn theta_sq_at(&self, coords: &[i32]) -> f64 {
        shell_value(&self.shells, norm_sq(coords))
    }

    pub fn support_len(&self) -> u64 {
        self.shells.iter().map(|s| s.multiplicity).sum()
    }

    /// `Σ_ℓ θ*⁴_ℓ` over the support.
    pub fn sum_theta4(&self) -> f64 {
        compensated_sum(
            self.shells
                .iter()
                .map(|s| s.multiplicity as f64 * s.value * s.value),
        )
    }

    /// Support points in lexicographic order.
    pub fn support_points(&self) -> Result<LatticePoints> {
        lattice::lattice_ball_with_budget(self.k, self.support_radius, None, DEFAULT_POINT_BUDGET)
    }
}

fn shell_value(shells: &[Shell], q: u64) -> f64 {
    shells
        .binary_search_by_key(&q, |s| s.norm_sq)
        .map(|i| shells[i].value)
        .unwrap_or(0.0)
}

fn theta_star_prefactor_ln(r: f64, k: usize, sigma: f64) -> f64 {
    let kf = k as f64;
    (2.0 + kf / sigma) * r.ln() + kf * 2f64.ln() + 0.5 * kf * PI.ln() + (kf + 2.0 * sigma).ln()
        + ln_gamma(1.0 + kf / 2.0)
        - (2.0 * sigma).ln()
        - kf / (2.0 * sigma) * (1.0 + 4.0 * sigma / kf).ln()
}

/// Extremal sequence for radius `r`, order `k` and smoothness `sigma`.
pub fn extremal_sequence(r: f64, k: usize, sigma: f64) -> Result<ExtremalProfile> {
    extremal_sequence_with_budget(r, k, sigma, DEFAULT_POINT_BUDGET)
}

pub fn extremal_sequence_with_budget(
    r: f64,
    k: usize,
    sigma: f64,
    budget: u64,
) -> Result<ExtremalProfile> {
    check_radius(r, k, sigma)?;
    let radius = support_radius(r, k, sigma);
    let kf = k as f64;
    let predicted = (0.5 * kf * PI.ln() - ln_gamma(0.5 * kf + 1.0)).exp() * radius.powi(k as i32);
    if predicted > budget as f64 {
        return Err(Error::Capacity {
            what: "extremal support",
            needed: predicted.min(u64::MAX as f64) as u64,
            cap: budget,
        });
    }
    let prefactor = theta_star_prefactor_ln(r, k, sigma).exp();
    let shrink = r * r / (1.0 + 4.0 * sigma / kf);
    let q_limit = (radius * radius).ceil() as u64 + 1;
    let shells = lattice::shell_table(k, q_limit, None)
        .into_iter()
        .filter_map(|(q, multiplicity)| {
            let clamp = 1.0 - sobolev_coeff_sq_from_norm(q, sigma) * shrink;
            (clamp > 0.0).then_some(Shell {
                norm_sq: q,
                multiplicity,
                value: prefactor * clamp,
            })
        })
        .collect();
    Ok(ExtremalProfile {
        r,
        k,
        sigma,
        support_radius: radius,
        shells,
    })
}

/// `a(r) = sqrt(Σ θ*⁴ / (2ε⁴))` from the lattice sum.
pub fn a_exact(r: f64, k: usize, sigma: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let profile = extremal_sequence(r, k, sigma)?;
    Ok(a_from_profile(&profile, epsilon))
}

fn a_from_profile(profile: &ExtremalProfile, epsilon: f64) -> f64 {
    (0.5 * profile.sum_theta4()).sqrt() / (epsilon * epsilon)
}

/// Which asymptotic expression for `a(r)` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    FixedK,
    GrowingK,
}

/// `ln C(σ, k)` for the fixed-order asymptotics.
pub fn ln_asymptotic_constant(k: usize, sigma: f64, regime: Regime) -> f64 {
    let kf = k as f64;
    match regime {
        Regime::FixedK => {
            let ln_c2 = kf * PI.ln() + (1.0 + 2.0 * sigma / kf).ln() + ln_gamma(1.0 + kf / 2.0)
                - (1.0 + kf / (2.0 * sigma)) * (1.0 + 4.0 * sigma / kf).ln()
                - kf * ln_gamma(1.5);
            0.5 * ln_c2
        }
        Regime::GrowingK => {
            0.25 * kf * (2.0 * PI * kf).ln() - 0.25 * kf - 1.0 + 0.25 * (PI * kf).ln()
        }
    }
}

fn asymptotic_exponent(k: usize, sigma: f64) -> f64 {
    2.0 + k as f64 / (2.0 * sigma)
}

/// Asymptotic `a(r) ≈ C r^{2 + k/(2σ)} ε^{-2}`.
pub fn a_asymp(r: f64, k: usize, sigma: f64, epsilon: f64, regime: Regime) -> Result<f64> {
    if !(r >= 0.0) || !(epsilon > 0.0) || k < 1 || !(sigma > 0.0) {
        return domain(format!(
            "a_asymp: need r >= 0, epsilon > 0, k >= 1, sigma > 0 (got r = {r}, epsilon = {epsilon}, k = {k}, sigma = {sigma})"
        ));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let ln_a = ln_asymptotic_constant(k, sigma, regime) + asymptotic_exponent(k, sigma) * r.ln()
        - 2.0 * epsilon.ln();
    Ok(ln_a.exp())
}

/// Which `a(·)` the radius calibration inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    Exact,
    Asymptotic(Regime),
}

/// Solves `a(r*) = target_a` for the radius.
pub fn solve_r_star(
    target_a: f64,
    k: usize,
    sigma: f64,
    epsilon: f64,
    mode: CalibrationMode,
) -> Result<f64> {
    if !(target_a > 0.0 && target_a.is_finite()) {
        return domain(format!("solve_r_star: target must be positive, got {target_a}"));
    }
    if !(epsilon > 0.0) || k < 1 || !(sigma > 0.0) {
        return domain("solve_r_star: need epsilon > 0, k >= 1, sigma > 0");
    }
    let closed_form = |regime| {
        ((target_a * epsilon * epsilon).ln() - ln_asymptotic_constant(k, sigma, regime))
            / asymptotic_exponent(k, sigma)
    };
    match mode {
        CalibrationMode::Asymptotic(regime) => Ok(closed_form(regime).exp()),
        CalibrationMode::Exact => {
            let upper = admissible_radius(k, sigma) * (1.0 - 1e-12);
            let a = |r: f64| a_exact(r, k, sigma, epsilon);
            let a_upper = a(upper)?;
            if a_upper < target_a {
                return Err(Error::Range {
                    target: target_a,
                    r_max: upper,
                    a_max: a_upper,
                });
            }
            let guess = closed_form(Regime::FixedK).exp().min(upper);
            let mut lo = guess;
            while a(lo)? > target_a {
                lo *= 0.5;
            }
            let mut hi = guess;
            while a(hi)? < target_a {
                hi = (hi * 2.0).min(upper);
            }
            if lo == hi {
                return Ok(lo);
            }
            let mut failure = None;
            let root = bisect(
                |r| match a(r) {
                    Ok(v) => v - target_a,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                },
                lo,
                hi,
                1e-15,
                |_, resid| (resid / target_a).abs() <= 0.1 * CALIBRATION_TOL,
            );
            match failure {
                Some(e) => Err(e),
                None => Ok(root),
            }
        }
    }
}

/// Calibration target `(1 + sqrt(1 - β_m)) sqrt(2 ln C(d, k))`.
pub fn calibration_target(d: u32, k: u32, beta_m: f64) -> Result<f64> {
    if !(beta_m > 0.0 && beta_m < 1.0) {
        return domain(format!("calibration_target: beta must lie in (0, 1), got {beta_m}"));
    }
    let lc = log_binomial(d as u64, k as u64)?;
    Ok((1.0 + (1.0 - beta_m).sqrt()) * (2.0 * lc).sqrt())
}

/// `M` equidistant sparsity indices on `[0.001, 0.999]`.
///
/// `M = 0` gives the empty grid and `M = 1` the single point `0.001`.
pub fn beta_grid(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Ok(vec![0.001; m]);
    }
    let step = 0.998 / (m - 1) as f64;
    Ok((0..m).map(|i| 0.001 + i as f64 * step).collect())
}

/// Test weights `ω_ℓ = θ*²_ℓ / (2ε² a(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub k: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub source_r: f64,
    pub a_value: f64,
    pub support_radius: f64,
    shells: Vec<Shell>,
}

impl WeightProfile {
    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn weight_at(&self, coords: &[i32]) -> f64 {
        shell_value(&self.shells, norm_sq(coords))
    }

    pub fn support_len(&self) -> u64 {
        self.shells.iter().map(|s| s.multiplicity).sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.shells.iter().map(|s| s.value).fold(0.0, f64::max)
    }

    /// Largest `|l_j|` over the support.
    pub fn max_coordinate(&self) -> u64 {
        // points with one large coordinate and the rest equal to ±1
        let k = self.k as u64;
        self.shells
            .last()
            .map(|s| {
                let q = s.norm_sq;
                let mut l = ((q.saturating_sub(k - 1)) as f64).sqrt().floor() as u64;
                while (l + 1) * (l + 1) + (k - 1) <= q {
                    l += 1;
                }
                while l > 0 && l * l + (k - 1) > q {
                    l -= 1;
                }
                l
            })
            .unwrap_or(0)
    }

    /// `Σ ω²`, which equals 1/2 by construction.
    pub fn sum_sq(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for s in &self.shells {
            acc.add(s.multiplicity as f64 * s.value * s.value);
        }
        acc.value()
    }

    /// Support points in lexicographic order.
    pub fn support_points(&self) -> Result<LatticePoints> {
        lattice::lattice_ball_with_budget(self.k, self.support_radius, None, DEFAULT_POINT_BUDGET)
    }
}

/// Weight profile at `r_star`.
pub fn weights(r_star: f64, k: usize, sigma: f64, epsilon: f64) -> Result<WeightProfile> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let profile = extremal_sequence(r_star, k, sigma)?;
    let a_value = a_from_profile(&profile, epsilon);
    let scale = 1.0 / (2.0 * epsilon * epsilon * a_value);
    let shells = profile
        .shells
        .iter()
        .map(|s| Shell {
            value: s.value * scale,
            ..*s
        })
        .collect();
    Ok(WeightProfile {
        k,
        sigma,
        epsilon,
        source_r: r_star,
        a_value,
        support_radius: profile.support_radius,
        shells,
    })
}

/// Calibrated radii for one interaction order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderGrid {
    pub k: u32,
    pub targets: Vec<f64>,
    pub r_stars: Vec<f64>,
    pub eps_hat: f64,
}

/// The sparsity-index grid and its calibrated radii for every order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m: usize,
    pub betas: Vec<f64>,
    pub mode: CalibrationMode,
    pub orders: Vec<OrderGrid>,
}

impl GridSpec {
    pub fn order(&self, k: u32) -> Option<&OrderGrid> {
        self.orders.iter().find(|o| o.k == k)
    }
}

/// Solves the calibration equation for every grid point of order `k`.
pub fn calibrate_order(
    d: u32,
    k: u32,
    betas: &[f64],
    sigma: f64,
    epsilon: f64,
    mode: CalibrationMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut targets = Vec::with_capacity(betas.len());
    let mut radii = Vec::with_capacity(betas.len());
    for &b in betas {
        let t = calibration_target(d, k, b)?;
        radii.push(solve_r_star(t, k as usize, sigma, epsilon, mode)?);
        targets.push(t);
    }
    Ok((targets, radii))
}
