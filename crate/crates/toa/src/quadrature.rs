//! Gauss–Legendre grids, oscillation budgets and the Airy function.

use crate::{invalid, Complex64, Result, ToaError};
use std::f64::consts::PI;

/// Quadrature nodes with strictly positive weights, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid1D {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return invalid("grid nodes and weights differ in length");
        }
        if nodes.is_empty() {
            return invalid("grid must contain at least one node");
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return invalid("grid weights must be positive and finite");
        }
        if nodes.windows(2).any(|p| !(p[1] > p[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return invalid("grid nodes must be finite and strictly increasing");
        }
        Ok(Self { nodes, weights })
    }

    /// Trapezoid weights for an arbitrary increasing set of sample points.
    pub fn trapezoid(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return invalid("trapezoid rule needs at least two points");
        }
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        Self::new(nodes, w)
    }

    /// `n` equally spaced points on [a, b] with trapezoid weights.
    pub fn uniform(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 2 || !(a < b) {
            return invalid("uniform grid needs n >= 2 and a < b");
        }
        let h = (b - a) / (n - 1) as f64;
        Self::trapezoid((0..n).map(|i| a + h * i as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Total weight, i.e. the length of the interval the grid integrates over.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Average number of nodes per unit of the integration variable.
    pub fn density(&self) -> f64 {
        self.len() as f64 / self.measure()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn integrate_complex(&self, f: impl Fn(f64) -> Complex64) -> Complex64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| f(x) * w).sum()
    }

    /// Concatenate grids on adjacent, non-overlapping intervals.
    pub fn concat(parts: &[Grid1D]) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for g in parts {
            nodes.extend_from_slice(&g.nodes);
            weights.extend_from_slice(&g.weights);
        }
        Self::new(nodes, weights)
    }
}

/// Gauss–Legendre rule with `n` nodes on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Grid1D> {
    if n < 1 {
        return invalid("Gauss-Legendre order must be at least 1");
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return invalid(format!("Gauss-Legendre interval [{a}, {b}] is empty or infinite"));
    }
    let (x, w) = legendre_reference(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = x.iter().map(|&t| mid + half * t).collect();
    let weights = w.iter().map(|&wi| half * wi).collect();
    Grid1D::new(nodes, weights)
}

/// Nodes and weights on [-1, 1], ascending.
fn legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `panels` equal Gauss–Legendre panels of `n` nodes each on [a, b].
pub fn composite_gauss_legendre(panels: usize, n: usize, a: f64, b: f64) -> Result<Grid1D> {
    if panels < 1 {
        return invalid("composite rule needs at least one panel");
    }
    if !(a < b) {
        return invalid(format!("composite interval [{a}, {b}] is empty"));
    }
    let h = (b - a) / panels as f64;
    let breaks: Vec<f64> = (0..=panels).map(|i| if i == panels { b } else { a + h * i as f64 }).collect();
    gauss_legendre_on_breaks(&breaks, n)
}

/// One `n`-node Gauss–Legendre panel between each pair of consecutive breakpoints.
pub fn gauss_legendre_on_breaks(breaks: &[f64], n: usize) -> Result<Grid1D> {
    if breaks.len() < 2 {
        return invalid("need at least two breakpoints");
    }
    if n < 1 {
        return invalid("Gauss-Legendre order must be at least 1");
    }
    let (x, w) = legendre_reference(n);
    let mut nodes = Vec::with_capacity(n * (breaks.len() - 1));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for p in breaks.windows(2) {
        if !(p[1] > p[0]) {
            return invalid("breakpoints must be strictly increasing");
        }
        let half = 0.5 * (p[1] - p[0]);
        let mid = 0.5 * (p[1] + p[0]);
        for (&t, &wi) in x.iter().zip(&w) {
            nodes.push(mid + half * t);
            weights.push(half * wi);
        }
    }
    Grid1D::new(nodes, weights)
}

/// Sampling requirement for an integrand whose phase advances at most
/// `max_phase_rate` radians per unit of the integration variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationBudget {
    pub max_phase_rate: f64,
    pub nodes_per_period: usize,
}

impl OscillationBudget {
    pub const DEFAULT_NODES_PER_PERIOD: usize = 8;

    pub fn new(max_phase_rate: f64, nodes_per_period: usize) -> Result<Self> {
        if nodes_per_period < 4 {
            return invalid("nodes_per_period must be at least 4");
        }
        if !(max_phase_rate >= 0.0) || !max_phase_rate.is_finite() {
            return invalid("max_phase_rate must be finite and non-negative");
        }
        Ok(Self { max_phase_rate, nodes_per_period })
    }

    pub fn with_rate(max_phase_rate: f64) -> Result<Self> {
        Self::new(max_phase_rate, Self::DEFAULT_NODES_PER_PERIOD)
    }

    /// Nodes per unit length needed to honour the budget.
    pub fn required_density(&self) -> f64 {
        self.nodes_per_period as f64 * self.max_phase_rate / (2.0 * PI)
    }

    pub fn check(&self, grid: &Grid1D) -> Result<()> {
        let required = self.required_density();
        let actual = grid.density();
        if actual + 1e-12 < required {
            return Err(ToaError::BudgetViolation { required, actual });
        }
        Ok(())
    }

    /// Number of `n`-node panels on an interval of length `width` that satisfies the budget.
    pub fn panels_for(&self, width: f64, n: usize) -> usize {
        let needed = self.required_density() * width / n as f64;
        (needed.ceil() as usize).max(1)
    }

    /// Smallest composite Gauss–Legendre grid on [a, b] that satisfies the budget,
    /// never using fewer than `min_panels` panels.
    pub fn grid(&self, a: f64, b: f64, n: usize, min_panels: usize) -> Result<Grid1D> {
        let panels = self.panels_for(b - a, n).max(min_panels);
        composite_gauss_legendre(panels, n, a, b)
    }
}

/// Σ wᵢ f(xᵢ) after verifying that the grid honours the oscillation budget.
pub fn oscillatory_integrate(
    f: impl Fn(f64) -> Complex64,
    grid: &Grid1D,
    budget: &OscillationBudget,
) -> Result<Complex64> {
    budget.check(grid)?;
    Ok(grid.integrate_complex(f))
}

/// Integrate on composite grids of increasing panel count until two successive
/// results agree to `tol`; returns the finer estimate.
pub fn integrate_by_doubling(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    budget: &OscillationBudget,
    tol: f64,
    max_levels: usize,
) -> Result<Complex64> {
    const N: usize = 16;
    let mut panels = budget.panels_for(b - a, N);
    let mut prev = oscillatory_integrate(&f, &composite_gauss_legendre(panels, N, a, b)?, budget)?;
    for _ in 0..max_levels {
        panels *= 2;
        let next = oscillatory_integrate(&f, &composite_gauss_legendre(panels, N, a, b)?, budget)?;
        if (next - prev).norm() <= tol * next.norm().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    crate::guard(format!("quadrature on [{a}, {b}] did not converge to {tol:e} after grid doubling"))
}

const AI0: f64 = 0.355_028_053_887_817_2;
const AIP0: f64 = 0.258_819_403_792_806_8;
const SERIES_MAX_POS: f64 = 6.0;
const SERIES_MAX_NEG: f64 = 6.0;

/// Airy function of the first kind.
pub fn airy_ai(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if (-SERIES_MAX_NEG..=SERIES_MAX_POS).contains(&x) {
        airy_series(x).0
    } else if x > 0.0 {
        airy_asymptotic_pos(x).0
    } else {
        airy_asymptotic_neg(-x).0
    }
}

/// Derivative of the Airy function of the first kind.
pub fn airy_ai_prime(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if (-SERIES_MAX_NEG..=SERIES_MAX_POS).contains(&x) {
        airy_series(x).1
    } else if x > 0.0 {
        airy_asymptotic_pos(x).1
    } else {
        airy_asymptotic_neg(-x).1
    }
}

/// Maclaurin series Ai = c₁f − c₂g together with its derivative.
fn airy_series(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    let mut f = 1.0;
    let mut g = x;
    let mut fp = 0.0;
    let mut gp = 1.0;
    let mut ft = 1.0;
    let mut gt = x;
    let mut fpt = 0.5 * x * x;
    let mut gpt = 1.0;
    fp += fpt;
    for k in 1..200 {
        let kf = k as f64;
        ft *= x3 / ((3.0 * kf - 1.0) * (3.0 * kf));
        gt *= x3 / ((3.0 * kf) * (3.0 * kf + 1.0));
        gpt *= x3 / ((3.0 * kf) * (3.0 * kf - 2.0));
        if k >= 2 {
            fpt *= x3 / ((3.0 * kf - 1.0) * (3.0 * kf - 3.0));
            fp += fpt;
        }
        f += ft;
        g += gt;
        gp += gpt;
        let scale = f.abs() + g.abs() + 1.0;
        if ft.abs() + gt.abs() + fpt.abs() + gpt.abs() < 1e-18 * scale {
            break;
        }
    }
    (AI0 * f - AIP0 * g, AI0 * fp - AIP0 * gp)
}

/// Coefficients uₖ and vₖ of the large-argument expansions.
fn airy_uv(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for k in 1..n {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

/// Sum Σ (−1)^k c_{start+2k... } style asymptotic series, stopping at the smallest term.
fn truncated_series(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for t in terms {
        if t.abs() > last {
            break;
        }
        sum += t;
        last = t.abs();
        if last < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn airy_asymptotic_pos(x: f64) -> (f64, f64) {
    let (u, v) = airy_uv(40);
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let su = truncated_series((0..u.len()).map(|k| sign(k) * u[k] / zeta.powi(k as i32)));
    let sv = truncated_series((0..v.len()).map(|k| sign(k) * v[k] / zeta.powi(k as i32)));
    let e = (-zeta).exp() / (2.0 * PI.sqrt());
    (e / x.powf(0.25) * su, -e * x.powf(0.25) * sv)
}

fn airy_asymptotic_neg(y: f64) -> (f64, f64) {
    let (u, v) = airy_uv(60);
    let zeta = 2.0 / 3.0 * y.powf(1.5);
    let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
    let ue = truncated_series((0..u.len() / 2).map(|k| sign(k) * u[2 * k] / zeta.powi(2 * k as i32)));
    let uo = truncated_series((0..u.len() / 2).map(|k| sign(k) * u[2 * k + 1] / zeta.powi(2 * k as i32 + 1)));
    let ve = truncated_series((0..v.len() / 2).map(|k| sign(k) * v[2 * k] / zeta.powi(2 * k as i32)));
    let vo = truncated_series((0..v.len() / 2).map(|k| sign(k) * v[2 * k + 1] / zeta.powi(2 * k as i32 + 1)));
    let phase = zeta - PI / 4.0;
    let (s, c) = phase.sin_cos();
    let ai = (c * ue + s * uo) / (PI.sqrt() * y.powf(0.25));
    let aip = y.powf(0.25) / PI.sqrt() * (s * ve - c * vo);
    (ai, aip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_is_midpoint() {
        let g = gauss_legendre(1, 0.0, 2.0).unwrap();
        assert_eq!(g.nodes(), &[1.0]);
        assert!((g.weights()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_nodes_integrate_square_exactly() {
        let g = gauss_legendre(2, 0.0, 1.0).unwrap();
        assert!((g.integrate(|x| x * x) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn oscillatory_exponential_matches_antiderivative() {
        let g = gauss_legendre(64, 0.0, 1.0).unwrap();
        let got = g.integrate_complex(|x| Complex64::new(0.0, 50.0 * x).exp());
        let want = (Complex64::new(0.0, 50.0).exp() - 1.0) / Complex64::new(0.0, 50.0);
        assert!((got - want).norm() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gauss_legendre(0, 0.0, 1.0).is_err());
        assert!(gauss_legendre(3, 1.0, 1.0).is_err());
        assert!(OscillationBudget::new(1.0, 3).is_err());
    }

    #[test]
    fn budget_violation_is_an_error() {
        let budget = OscillationBudget::with_rate(200.0).unwrap();
        let g = gauss_legendre(8, 0.0, 1.0).unwrap();
        let r = oscillatory_integrate(|_| Complex64::new(1.0, 0.0), &g, &budget);
        assert!(matches!(r, Err(ToaError::BudgetViolation { .. })));
    }

    #[test]
    fn constant_integrand() {
        let budget = OscillationBudget::with_rate(0.0).unwrap();
        let g = gauss_legendre(5, 0.0, 1.0).unwrap();
        let r = oscillatory_integrate(|_| Complex64::new(1.0, 0.0), &g, &budget).unwrap();
        assert!((r.re - 1.0).abs() < 1e-15 && r.im == 0.0);
    }

    #[test]
    fn gaussian_fourier_transform() {
        // ∫ e^{iμs} e^{-s²/2} ds = √(2π) e^{-μ²/2}
        let mu = 3.7;
        let budget = OscillationBudget::with_rate(mu).unwrap();
        let g = budget.grid(-12.0, 12.0, 20, 12).unwrap();
        let got = oscillatory_integrate(
            |s| Complex64::new(0.0, mu * s).exp() * (-0.5 * s * s).exp(),
            &g,
            &budget,
        )
        .unwrap();
        let want = (2.0 * PI).sqrt() * (-0.5 * mu * mu).exp();
        assert!((got.re - want).abs() < 1e-10 && got.im.abs() < 1e-10);
    }

    #[test]
    fn doubling_converges() {
        let budget = OscillationBudget::with_rate(30.0).unwrap();
        let r = integrate_by_doubling(|x| Complex64::new(0.0, 30.0 * x).exp(), 0.0, 2.0, &budget, 1e-12, 6)
            .unwrap();
        let want = (Complex64::new(0.0, 60.0).exp() - 1.0) / Complex64::new(0.0, 30.0);
        assert!((r - want).norm() < 1e-12);
    }

    #[test]
    fn airy_at_zero() {
        assert!((airy_ai(0.0) - AI0).abs() < 1e-16);
        assert!((airy_ai_prime(0.0) + AIP0).abs() < 1e-16);
    }

    #[test]
    fn airy_regimes_join_continuously() {
        for &x in &[SERIES_MAX_POS, -SERIES_MAX_NEG] {
            let a = airy_series(x);
            let b = if x > 0.0 { airy_asymptotic_pos(x) } else { airy_asymptotic_neg(-x) };
            assert!((a.0 - b.0).abs() < 1e-10, "Ai at {x}: {} vs {}", a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-9, "Ai' at {x}: {} vs {}", a.1, b.1);
        }
    }

    #[test]
    fn airy_ode() {
        let h = 1e-3;
        let mut x = -20.0;
        while x <= 10.0 {
            let d2 = (airy_ai(x + h) - 2.0 * airy_ai(x) + airy_ai(x - h)) / (h * h);
            assert!((d2 - x * airy_ai(x)).abs() < 1e-4 * (1.0 + x.abs()), "x = {x}");
            x += 0.37;
        }
    }
}
