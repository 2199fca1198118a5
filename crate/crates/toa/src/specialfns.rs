//! The distribution u(s) = (1/2π)∫dξ √(1+ξ²) e^{iξs} and its regularisation
//! ζ_ε(s), with u = dζ/ds in the limit ε → 0.
//!
//! u is never evaluated pointwise. It enters through its generating function
//! z(μ) = √(1+μ²), through pairings ∫u f, or through ζ_ε. Away from the origin
//! u(s) = −K₁(|s|)/(π|s|) < 0, and its singular part at s = 0 carries the
//! positive weight that makes ∫u = 1.

use crate::quadrature::{gauss_legendre_on_breaks, Grid1D};
use crate::states::WignerFunction;
use crate::toa_single::DensityCurve;
use crate::{invalid, Result};
use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const ORDER: usize = 16;

/// z(μ) = ∫ds u(s) e^{iμs} = √(1+μ²).
pub fn u_generating(mu: f64) -> f64 {
    mu.hypot(1.0)
}

/// ∫ds sⁿ u(s) = (−i)ⁿ z⁽ⁿ⁾(0): zero for odd n, and −(2k−1)!!(2k−3)!! for
/// n = 2k ≥ 2. Only n = 0 is positive, since s^{2k} vanishes on the singular
/// point and u < 0 elsewhere.
pub fn u_moment(n: i64) -> Result<f64> {
    if n < 0 {
        return invalid(format!("moment order must be non-negative, got {n}"));
    }
    if n % 2 == 1 {
        return Ok(0.0);
    }
    let k = n / 2;
    if k == 0 {
        return Ok(1.0);
    }
    let double_factorial = |mut j: i64| {
        let mut p = 1.0;
        while j > 1 {
            p *= j as f64;
            j -= 2;
        }
        p
    };
    Ok(-double_factorial(2 * k - 1) * double_factorial(2 * k - 3))
}

/// Largest order of the stored scaling series.
pub const U_SERIES_MAX_ORDER: usize = 6;

/// Coefficients c_k of u(as) = Σ_k c_k a^{−2k−1} δ^{(2k)}(s) for k = 0..=order,
/// i.e. the binomial coefficients of √(1+x) with alternating sign:
/// 1, −1/2, −1/8, −1/16, …
pub fn u_series_coefficients(order: usize) -> Result<Vec<f64>> {
    if order > U_SERIES_MAX_ORDER {
        return invalid(format!("series stored up to order {U_SERIES_MAX_ORDER}, requested {order}"));
    }
    let mut c = vec![1.0];
    let mut binom = 1.0;
    for k in 1..=order {
        binom *= (0.5 - (k - 1) as f64) / k as f64;
        c.push(if k % 2 == 0 { binom } else { -binom });
    }
    Ok(c)
}

/// ζ_ε(s) = (1/π)∫₀^∞ dk (sin ks / k) √(1+k²) e^{−kε}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedZeta {
    epsilon: f64,
}

impl RegularizedZeta {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return invalid(format!("ζ_ε needs ε > 0, got {epsilon}"));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Splitting √(1+k²) = k + r(k) gives the closed form s/(s²+ε²) for the
    /// first part; the remainder r(k)/k decays as 1/(2k²) and is integrated
    /// on [0, K] with its tail summed by repeated integration by parts.
    pub fn eval(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let (eps, a) = (self.epsilon, s.abs());
        let kmax = (64.0 / a).max(16.0);
        let head = remainder_grid(a, kmax).integrate(|k| (k * a).sin() * r_over_k(k) * (-eps * k).exp());
        let tail = remainder_tail(a, eps, kmax);
        s.signum() * (a / (a * a + eps * eps) + head + tail) / PI
    }
}

pub fn zeta_eval(z: &RegularizedZeta, s: f64) -> f64 {
    z.eval(s)
}

/// (√(1+k²) − k)/k without cancellation.
fn r_over_k(k: f64) -> f64 {
    1.0 / (k * (k.hypot(1.0) + k))
}

/// [0, 1] followed by doubling panels up to `kmax`, each split to keep eight
/// nodes per period of sin(ks).
fn remainder_grid(s: f64, kmax: f64) -> Grid1D {
    let mut breaks = vec![0.0];
    let mut edge = 1.0f64;
    let mut prev = 0.0;
    loop {
        let end = edge.min(kmax);
        let pieces = ((end - prev) * s * 8.0 / (2.0 * PI * ORDER as f64)).ceil().max(1.0) as usize;
        for i in 1..=pieces {
            breaks.push(prev + (end - prev) * i as f64 / pieces as f64);
        }
        if end >= kmax {
            break;
        }
        prev = end;
        edge *= 2.0;
    }
    gauss_legendre_on_breaks(&breaks, ORDER).expect("increasing breakpoints")
}

/// ∫_K^∞ sin(ks) h(k) dk with h = (r(k)/k)e^{−εk}, using the large-k series
/// r(k)/k = Σ aₙ k^{−2n} and ∫_K^∞ e^{iks}h = −e^{iKs} Σⱼ (−1)ʲ h⁽ʲ⁾(K)/(is)^{j+1}.
fn remainder_tail(s: f64, eps: f64, kmax: f64) -> f64 {
    // √(1+x) − 1 = Σ binom(1/2, n) xⁿ with x = 1/k².
    const SERIES: [(i32, f64); 5] = [(2, 0.5), (4, -0.125), (6, 0.0625), (8, -0.0390625), (10, 0.02734375)];
    const TERMS: usize = 7;
    let k = kmax;
    let damp = (-eps * k).exp();
    // h⁽ʲ⁾(K) by the Leibniz rule on k^{−n}·e^{−εk}.
    let derivative = |j: usize| -> f64 {
        let mut total = 0.0;
        for &(n, a) in &SERIES {
            let mut sum = 0.0;
            let mut falling = 1.0;
            let mut binom = 1.0;
            for i in 0..=j {
                if i > 0 {
                    falling *= -(n as f64) - (i - 1) as f64;
                    binom = binom * (j - i + 1) as f64 / i as f64;
                }
                sum += binom * falling * k.powi(-n - i as i32) * (-eps).powi((j - i) as i32);
            }
            total += a * sum;
        }
        total * damp
    };
    let phase = num_complex::Complex64::from_polar(1.0, k * s);
    let is = num_complex::Complex64::new(0.0, s);
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    let mut pow = is;
    for j in 0..TERMS {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc -= phase * (sign * derivative(j)) / pow;
        pow *= is;
    }
    acc.im
}

/// Regular part 1/s² − K₁(s)/s of −πu for s > 0, by its series near the origin.
fn regular_kernel(s: f64) -> f64 {
    if s >= 0.5 {
        return 1.0 / (s * s) - puruspe::Kn(1, s) / s;
    }
    // K₁(s)/s = 1/s² + Σₖ s^{2k}/(2^{2k+1} k!(k+1)!)·[ln(s/2) − (ψ(k+1)+ψ(k+2))/2].
    let log = (0.5 * s).ln();
    let mut total = 0.0;
    let mut coef = 0.5;
    let mut harmonic = 0.0;
    for k in 0..8 {
        if k > 0 {
            coef *= s * s / (4.0 * k as f64 * (k + 1) as f64);
            harmonic += 1.0 / k as f64;
        }
        let psi_sum = 2.0 * (harmonic - EULER_GAMMA) + 1.0 / (k + 1) as f64;
        total -= coef * (log - 0.5 * psi_sum);
    }
    total
}

/// Panels on [0, w]: 64 uniform ones, the first refined geometrically down to `floor`.
fn pairing_grid(w: f64, floor: f64) -> Grid1D {
    let first = w / 64.0;
    let mut breaks = vec![0.0];
    let mut x = first;
    let mut inner = Vec::new();
    while x > floor {
        inner.push(x);
        x *= 0.5;
    }
    breaks.extend(inner.iter().rev());
    breaks.extend((2..=64).map(|i| w * i as f64 / 64.0));
    gauss_legendre_on_breaks(&breaks, ORDER).expect("increasing breakpoints")
}

/// Fourth-order central difference with step h.
fn derivative(f: &impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
    (f(s - 2.0 * h) - 8.0 * f(s - h) + 8.0 * f(s + h) - f(s + 2.0 * h)) / (12.0 * h)
}

fn check_decay(f: &impl Fn(f64) -> f64, half_width: f64) -> Result<()> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return invalid("pairing needs a positive finite half-width");
    }
    let scan = (0..=256).map(|i| f(half_width * (i as f64 / 128.0 - 1.0)).abs()).fold(0.0f64, f64::max);
    let edge = f(half_width).abs().max(f(-half_width).abs());
    if !(edge <= 1e-10 * scan.max(1e-300)) {
        return invalid(format!("test function does not decay on [−{half_width}, {half_width}]: edge value {edge:e}"));
    }
    Ok(())
}

/// ∫u f = −∫ζ_ε f' for a test function that is negligible beyond |s| = half_width.
/// f' is taken by finite differences. Only the odd part of f' contributes.
pub fn u_smeared(f: impl Fn(f64) -> f64, epsilon: f64, half_width: f64) -> Result<f64> {
    let zeta = RegularizedZeta::new(epsilon)?;
    check_decay(&f, half_width)?;
    let h = 1e-4 * half_width;
    let grid = pairing_grid(half_width, 1e-4 * epsilon.min(half_width));
    Ok(-grid.integrate(|s| zeta.eval(s) * (derivative(&f, s, h) - derivative(&f, -s, h))))
}

/// The ε → 0 limit of [`u_smeared`] in closed form:
/// ∫u f = −(1/π)∫₀^∞ [f'(s) − f'(−s)]/s ds + (1/π)∫₀^∞ (1/s² − K₁(s)/s)[f(s) + f(−s)] ds.
pub fn u_pairing(f: impl Fn(f64) -> f64, half_width: f64) -> Result<f64> {
    check_decay(&f, half_width)?;
    let h = 1e-4 * half_width;
    let grid = pairing_grid(half_width, 1e-12 * half_width);
    let pv = grid.integrate(|s| (derivative(&f, s, h) - derivative(&f, -s, h)) / s);
    let regular = grid.integrate(|s| regular_kernel(s) * (f(s) + f(-s)));
    Ok((regular - pv) / PI)
}

/// Richardson extrapolation of u_smeared over ε, ε/10, ε/100.
pub fn u_smeared_extrapolated(f: impl Fn(f64) -> f64 + Copy, epsilon: f64, half_width: f64) -> Result<f64> {
    let a = u_smeared(f, epsilon, half_width)?;
    let b = u_smeared(f, 0.1 * epsilon, half_width)?;
    let c = u_smeared(f, 0.01 * epsilon, half_width)?;
    let (r1, r2) = ((10.0 * b - a) / 9.0, (10.0 * c - b) / 9.0);
    Ok((100.0 * r2 - r1) / 99.0)
}

/// P(L, t) = ∫dXdP (2P²/m) u[2P(L − X − tP/m)] W(X, P). At fixed P the X integral
/// is a pairing in s = 2P(L − X − tP/m). Works for any phase-space density,
/// including ones that are not Wigner functions of a state.
pub fn wigner_arrival_density(w: &WignerFunction, l: f64, mass: f64, times: &[f64], p_panels: usize) -> Result<DensityCurve> {
    crate::toa_single::check_times(times)?;
    if !(mass > 0.0) {
        return invalid("mass must be positive");
    }
    let (xa, xb, pa, pb) = w.support_box;
    if pa <= 0.0 && pb >= 0.0 {
        return invalid("phase-space support must not contain P = 0");
    }
    let pgrid = crate::quadrature::composite_gauss_legendre(p_panels.max(1), ORDER, pa, pb)?;
    let density = times
        .iter()
        .map(|&t| -> Result<f64> {
            let mut total = 0.0;
            for (&p, &wp) in pgrid.nodes().iter().zip(pgrid.weights()) {
                let centre = l - t * p / mass;
                // s ranges over 2P(centre − [xa, xb]), padded for the tails.
                let span = 2.0 * p.abs() * ((centre - xa).abs().max((centre - xb).abs()) + (xb - xa));
                let f = |s: f64| w.eval(centre - s / (2.0 * p), p);
                if f(span).abs().max(f(-span).abs()) == 0.0 && (0..=64).all(|i| f(span * (i as f64 / 32.0 - 1.0)) == 0.0) {
                    continue;
                }
                total += wp * p.abs() / mass * u_pairing(f, span)?;
            }
            Ok(total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityCurve {
        times: times.to_vec(),
        weights: Grid1D::trapezoid(times.to_vec())?.weights().to_vec(),
        density,
        no_detection: 0.0,
    })
}
