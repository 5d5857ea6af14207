//! Composite Gauss–Legendre quadrature on `[0, 1]`.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Composite rule description.
///
/// For an integrand oscillating at frequency `l` the panel count is
/// `max(min_panels, panels_per_frequency * |l|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuadratureSpec {
    pub min_panels: u32,
    pub nodes_per_panel: u32,
    pub panels_per_frequency: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            min_panels: 64,
            nodes_per_panel: 16,
            panels_per_frequency: 1,
        }
    }
}

impl QuadratureSpec {
    /// Fixed rule that does not adapt to the frequency.
    pub fn fixed(panels: u32, nodes_per_panel: u32) -> Self {
        QuadratureSpec {
            min_panels: panels,
            nodes_per_panel,
            panels_per_frequency: 0,
        }
    }

    /// Same rule with half the step.
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            min_panels: self.min_panels * 2,
            nodes_per_panel: self.nodes_per_panel,
            panels_per_frequency: self.panels_per_frequency * 2,
        }
    }

    pub fn panels_for(&self, l: i64) -> u32 {
        let adaptive = (self.panels_per_frequency as u64 * l.unsigned_abs()).min(u32::MAX as u64) as u32;
        self.min_panels.max(adaptive).max(1)
    }

    pub fn nodes_for(&self, l: i64) -> u64 {
        self.panels_for(l) as u64 * self.nodes_per_panel as u64
    }

    /// `∫_0^1 f` with the panel count chosen for frequency `l`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, l: i64, f: F) -> f64 {
        let owned;
        let rule = if self.nodes_per_panel == 16 {
            gl16()
        } else {
            owned = GaussLegendre::new(self.nodes_per_panel as usize);
            &owned
        };
        let panels = self.panels_for(l);
        let h = 1.0 / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let a = p as f64 * h;
            let mut acc = 0.0;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                acc += w * f(a + 0.5 * h * (x + 1.0));
            }
            total += 0.5 * h * acc;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let q = QuadratureSpec::fixed(1, 16);
        // degree 31 is the limit of a 16-point rule
        let v = q.integrate(0, |t| t.powi(31));
        assert!((v - 1.0 / 32.0).abs() < 1e-15);
        let g = GaussLegendre::new(16);
        assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_rules_match_tabulated_values() {
        let g = GaussLegendre::new(2);
        assert!((g.nodes[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let g = GaussLegendre::new(3);
        assert!((g.nodes[2] - 0.6f64.sqrt()).abs() < 1e-15);
        assert!((g.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_integrand() {
        let q = QuadratureSpec::default();
        for l in [1i64, 37, 400, 700] {
            let v = q.integrate(l, |t| t * (2.0 * PI * l as f64 * t).sin());
            let exact = -1.0 / (2.0 * PI * l as f64);
            assert!((v - exact).abs() < 1e-13, "l={l}");
        }
    }
}
