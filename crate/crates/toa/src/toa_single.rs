//! Single-detector arrival-time densities for the η-family of proposals.
//!
//! All proposals share the kernel
//! ⟨k'|Π_L(t)|k⟩ = (1/2π)·((k+k')/2m)·η(4(k'−k)/(k+k'))·e^{i(k−k')L − i(ε_k−ε_k')t}
//! restricted to k, k' > 0, and differ only in η.

use crate::povm::ArrivalOperator;
use crate::quadrature::{composite_gauss_legendre, Grid1D, OscillationBudget};
use crate::states::{arrival_phase_rate, union_window, MixedState, MomentumState, WignerFunction};
use crate::{guard, invalid, Complex64, Result, ToaError};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

/// Densities below this are not attributed to round-off.
pub const NEGATIVITY_LIMIT: f64 = -1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaLabel {
    Qtp,
    Kijowski,
    Current,
    Custom,
}

#[derive(Clone)]
pub struct EtaFamily {
    label: EtaLabel,
    name: &'static str,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// η is defined for |x| < domain.
    domain: f64,
    pub derivative_at_zero: f64,
}

impl std::fmt::Debug for EtaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EtaFamily").field("label", &self.label).field("name", &self.name).finish()
    }
}

impl EtaFamily {
    pub fn qtp() -> Self {
        Self::named(EtaLabel::Qtp, "qtp", f64::INFINITY, |x| (1.0 + x * x / 16.0).sqrt())
    }

    pub fn kijowski() -> Self {
        Self::named(EtaLabel::Kijowski, "kijowski", 4.0, |x| (1.0 - x * x / 16.0).max(0.0).sqrt())
    }

    pub fn current() -> Self {
        Self::named(EtaLabel::Current, "current", f64::INFINITY, |_| 1.0)
    }

    /// η(x) = (1+x²/16)^{3/2}/(1−x²/16), the second-detector marginal of two
    /// sequential ideal detections.
    pub fn sequential_marginal() -> Self {
        Self::named(EtaLabel::Custom, "sequential-marginal", 4.0, |x| {
            let y = x * x / 16.0;
            (1.0 + y).powf(1.5) / (1.0 - y)
        })
    }

    /// User-supplied η on |x| < domain.
    pub fn custom(eval: impl Fn(f64) -> f64 + Send + Sync + 'static, domain: f64) -> Result<Self> {
        if !(domain > 0.0) {
            return invalid("custom η needs a positive domain");
        }
        Ok(Self::named(EtaLabel::Custom, "custom", domain, eval))
    }

    fn named(label: EtaLabel, name: &'static str, domain: f64, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let h = 1e-6;
        let derivative_at_zero = (eval(h) - eval(-h)) / (2.0 * h);
        Self { label, name, eval: Arc::new(eval), domain, derivative_at_zero }
    }

    pub fn label(&self) -> EtaLabel {
        self.label
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn domain(&self) -> f64 {
        self.domain
    }

    /// η(x) without the domain check.
    pub fn raw(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

pub fn eta_eval(family: &EtaFamily, x: f64) -> Result<f64> {
    if x.abs() >= family.domain {
        return invalid(format!("η family {} is undefined at x = {x} (|x| must be below {})", family.name, family.domain));
    }
    Ok((family.eval)(x))
}

#[derive(Clone)]
pub enum Absorption {
    Ideal,
    /// Absorption rate α(ε) ≥ 0.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Absorption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Ideal => write!(f, "Ideal"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Absorption {
    pub(crate) fn rate(&self, e: f64) -> f64 {
        match self {
            Self::Ideal => 1.0,
            Self::Custom(a) => a(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub l: f64,
    pub absorption: Absorption,
    /// Width of the Gaussian time smearing; 0 for sharp detection.
    pub smear_sigma: f64,
}

impl DetectorConfig {
    pub fn ideal(l: f64) -> Self {
        Self { l, absorption: Absorption::Ideal, smear_sigma: 0.0 }
    }

    pub fn with_smear(mut self, sigma: f64) -> Self {
        self.smear_sigma = sigma;
        self
    }

    pub fn with_absorption(mut self, alpha: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.absorption = Absorption::Custom(Arc::new(alpha));
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.l.is_finite() {
            return invalid("detector position must be finite");
        }
        if !(self.smear_sigma >= 0.0) {
            return invalid("smear_sigma must be non-negative");
        }
        Ok(())
    }
}

/// P(t) sampled on a time grid with quadrature weights, plus the mass never detected.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub density: Vec<f64>,
    pub no_detection: f64,
}

impl DensityCurve {
    pub fn detected(&self) -> f64 {
        self.weights.iter().zip(&self.density).map(|(w, p)| w * p).sum()
    }

    pub fn peak(&self) -> (f64, f64) {
        self.times
            .iter()
            .zip(&self.density)
            .fold((f64::NAN, f64::NEG_INFINITY), |acc, (&t, &p)| if p > acc.1 { (t, p) } else { acc })
    }
}

/// Time-independent kernel amplitude for a family and detector, without normalization.
pub fn kernel_amplitude(family: &EtaFamily, det: &DetectorConfig, mass: f64) -> impl Fn(f64, f64) -> f64 + Sync + Send {
    let eta = family.eval.clone();
    let absorption = det.absorption.clone();
    let s2 = det.smear_sigma * det.smear_sigma;
    move |k, q| {
        if k <= 0.0 || q <= 0.0 {
            return 0.0;
        }
        let (ek, eq) = (0.5 * k * k / mass, 0.5 * q * q / mass);
        let mut v = (k + q) / (4.0 * PI * mass) * eta(4.0 * (q - k) / (k + q)) * absorption.rate(0.5 * (ek + eq));
        if s2 > 0.0 {
            v *= (-0.5 * s2 * (ek - eq).powi(2)).exp();
        }
        v
    }
}

pub fn povm_kernel(family: &EtaFamily, l: f64, t: f64, k: f64, k2: f64, mass: f64) -> Result<Complex64> {
    if k + k2 <= 0.0 {
        return invalid("kernel needs k + k2 > 0");
    }
    let eta = eta_eval(family, 4.0 * (k2 - k) / (k + k2))?;
    let phase = (k - k2) * l - 0.5 * (k * k - k2 * k2) / mass * t;
    Ok(Complex64::from_polar((k + k2) / (4.0 * PI * mass) * eta, phase))
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return invalid("time grid needs at least two points");
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("times must be strictly increasing");
    }
    Ok(())
}

pub(crate) fn check_time_spacing(times: &[f64], energy_spread: f64) -> Result<()> {
    let step = times.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
    let limit = PI / (4.0 * energy_spread.max(1e-300));
    if step > limit {
        return invalid(format!("time grid too coarse: spacing {step:e} exceeds {limit:e} for the state's energy spread"));
    }
    Ok(())
}

fn check_budget(grid: &Grid1D, x_range: (f64, f64), ls: &[f64], times: &[f64], mass: f64) -> Result<()> {
    let rate = arrival_phase_rate((grid.first(), grid.last()), x_range, ls, (times[0], times[times.len() - 1]), mass);
    OscillationBudget::with_rate(rate)?.check(grid)
}

/// Negative values down to [`NEGATIVITY_LIMIT`] are round-off and clipped to
/// zero. Deeper ones are recomputed on an independent, twice as dense momentum
/// grid: if they persist they are a property of the kernel (the qtp operator is
/// not positive on superpositions) and are kept unclipped, otherwise the
/// quadrature has failed.
fn positivity_guard(
    density: &mut [f64],
    source: &MomentumState,
    det: &DetectorConfig,
    family: &EtaFamily,
    times: &[f64],
) -> Result<()> {
    if density.iter().any(|v| !v.is_finite()) {
        return guard("non-finite density value");
    }
    let bad: Vec<usize> = (0..density.len()).filter(|&i| density[i] < NEGATIVITY_LIMIT).collect();
    if bad.is_empty() {
        density.iter_mut().for_each(|v| *v = v.max(0.0));
        return Ok(());
    }
    if !source.is_analytic() {
        return guard(format!("density {:e} below {NEGATIVITY_LIMIT:e}", density[bad[0]]));
    }
    let (a, b) = union_window(source.modes().iter().map(|(_, m)| m));
    let (a, b) = (a.min(source.grid().first()), b.max(source.grid().last()));
    let panels = 2 * source.grid().len().div_ceil(16) + 1;
    let refined = source.resampled(composite_gauss_legendre(panels, 16, a, b)?)?;
    let m = source.mass();
    let op = ArrivalOperator::new(refined.grid(), m, det.l, kernel_amplitude(family, det, m))?;
    let peak = density.iter().fold(0.0f64, |x, v| x.max(v.abs()));
    for &i in &bad {
        let v = op.expectation(refined.amplitudes(), times[i]);
        if (v - density[i]).abs() > 1e-8 * peak + 1e-12 {
            return guard(format!(
                "density {:e} below {NEGATIVITY_LIMIT:e} at t = {} changes to {v:e} under grid refinement",
                density[i], times[i]
            ));
        }
    }
    Ok(())
}

/// Mass detected by a detector with the given absorption, ∫_{k>0} α(ε_k)|ψ̃|².
fn detection_weight(state: &MixedState, det: &DetectorConfig) -> f64 {
    let m = state.mass();
    state.momentum_expectation(|k| if k > 0.0 { det.absorption.rate(0.5 * k * k / m) } else { 0.0 })
}

/// Arrival density with quadrature weights from a time grid.
pub fn arrival_density_on(state: &MomentumState, det: &DetectorConfig, family: &EtaFamily, times: &Grid1D) -> Result<DensityCurve> {
    mixed_density(&MixedState::pure(state), det, family, times, true, Some(state))
}

/// P(t) on the given times with trapezoid weights. With a custom absorption
/// rate the density is rescaled so that the detected mass matches the
/// positive-momentum mass.
pub fn arrival_density(state: &MomentumState, det: &DetectorConfig, family: &EtaFamily, times: &[f64]) -> Result<DensityCurve> {
    check_times(times)?;
    arrival_density_on(state, det, family, &Grid1D::trapezoid(times.to_vec())?)
}

/// As [`arrival_density`] without the absorption renormalization.
pub fn arrival_density_raw(state: &MomentumState, det: &DetectorConfig, family: &EtaFamily, times: &[f64]) -> Result<DensityCurve> {
    check_times(times)?;
    mixed_density(&MixedState::pure(state), det, family, &Grid1D::trapezoid(times.to_vec())?, false, Some(state))
}

/// Arrival density of an ensemble (thermal states, reduced states). The qtp
/// kernel is not a positive matrix on k > 0 (already the 2×2 block at k = 1, 2
/// has negative determinant), and ensembles with weight near k = 0 can show
/// small genuinely negative values; they are returned as computed, without the
/// positivity guard.
pub fn mixed_arrival_density(state: &MixedState, det: &DetectorConfig, family: &EtaFamily, times: &[f64]) -> Result<DensityCurve> {
    check_times(times)?;
    mixed_density(state, det, family, &Grid1D::trapezoid(times.to_vec())?, true, None)
}

fn mixed_density(
    state: &MixedState,
    det: &DetectorConfig,
    family: &EtaFamily,
    times: &Grid1D,
    renormalize: bool,
    verify: Option<&MomentumState>,
) -> Result<DensityCurve> {
    det.validate()?;
    let t = times.nodes();
    check_times(t)?;
    let grid = state.grid();
    let m = state.mass();
    check_budget(grid, state.x_range(), &[det.l], t, m)?;
    let e1 = state.momentum_expectation(|k| 0.5 * k * k / m);
    let e2 = state.momentum_expectation(|k| (0.5 * k * k / m).powi(2));
    check_time_spacing(t, (e2 - e1 * e1).max(0.0).sqrt())?;
    let op = ArrivalOperator::new(grid, m, det.l, kernel_amplitude(family, det, m))?;
    let comps = state.components();
    let mut density: Vec<f64> =
        t.par_iter().map(|&ti| comps.iter().map(|(lam, a)| lam * op.expectation(a, ti)).sum()).collect();
    if let Some(source) = verify {
        positivity_guard(&mut density, source, det, family, t)?;
    }
    let positive = state.momentum_expectation(|k| if k > 0.0 { 1.0 } else { 0.0 });
    let detected = detection_weight(state, det);
    let no_detection;
    if matches!(det.absorption, Absorption::Custom(_)) && renormalize {
        if !(detected > 1e-300) {
            return guard("absorption rate vanishes on the state's support");
        }
        let scale = positive / detected;
        density.iter_mut().for_each(|p| *p *= scale);
        no_detection = no_detection_mass(state, det, family, positive)?;
    } else {
        no_detection = no_detection_mass(state, det, family, detected)?;
    }
    Ok(DensityCurve { times: t.to_vec(), weights: times.weights().to_vec(), density, no_detection })
}

/// 1 − ∫₀^∞ P(t)dt for a pure state.
pub fn no_detection_probability(state: &MomentumState, det: &DetectorConfig, family: &EtaFamily) -> Result<f64> {
    det.validate()?;
    let mixed = MixedState::pure(state);
    let detected = detection_weight(&mixed, det);
    no_detection_mass(&mixed, det, family, detected)
}

/// `full_mass` is the integral of P over the whole time axis. States entirely
/// to the left of the detector deliver all of it at t > 0; otherwise the
/// portion at negative times is computed and added back.
fn no_detection_mass(state: &MixedState, det: &DetectorConfig, family: &EtaFamily, full_mass: f64) -> Result<f64> {
    let (_, xb) = state.x_range();
    if xb <= det.l {
        return Ok((1.0 - full_mass).clamp(0.0, 1.0));
    }
    let grid = state.grid();
    let m = state.mass();
    let kmax = grid.last();
    if kmax <= 0.0 {
        return Ok(1.0);
    }
    let k_lo = grid.nodes().iter().copied().filter(|&k| k > 0.0).fold(f64::INFINITY, f64::min).max(1e-3 * kmax);
    let (xa, _) = state.x_range();
    let span = (xb - det.l).abs().max((det.l - xa).abs());
    let t_back = m * span / k_lo;
    let e_max = 0.5 * kmax * kmax / m;
    let needed = e_max * t_back * 8.0 / (2.0 * PI);
    if needed > 40_000.0 {
        return guard(format!(
            "state straddles the detector down to k = {k_lo:e}; the negative-time density would need {needed:.0} nodes"
        ));
    }
    let nodes = (needed as usize).max(64);
    let tg = composite_gauss_legendre(nodes.div_ceil(16), 16, -t_back, 0.0)?;
    let op = ArrivalOperator::new(grid, m, det.l, kernel_amplitude(family, det, m))?;
    let comps = state.components();
    let vals: Vec<f64> =
        tg.nodes().par_iter().map(|&ti| comps.iter().map(|(lam, a)| lam * op.expectation(a, ti)).sum()).collect();
    let negative_time: f64 = vals.iter().zip(tg.weights()).map(|(v, w)| v * w).sum();
    Ok((1.0 - full_mass + negative_time).clamp(0.0, 1.0))
}

/// P_cl(t) = ∫dP (|P|/m) W(L − tP/m, P).
pub fn classical_arrival_density(w: &WignerFunction, l: f64, mass: f64, times: &[f64]) -> Result<DensityCurve> {
    check_times(times)?;
    if !(mass > 0.0) {
        return invalid("mass must be positive");
    }
    let (xa, xb, pa, pb) = w.support_box;
    let tol = 1e-3 * pa.abs().max(pb.abs());
    if pa <= tol && pb >= -tol {
        return invalid("Wigner support touches P = 0 where the classical arrival time diverges");
    }
    let x_width = (xb - xa) / 16.0;
    let density: Vec<f64> = times
        .par_iter()
        .map(|&t| {
            let cells = (pb - pa) * t.abs() / mass / x_width;
            let panels = ((8.0 * cells / 16.0).ceil() as usize).clamp(32, 4096);
            let g = composite_gauss_legendre(panels, 16, pa, pb).expect("valid momentum range");
            g.integrate(|p| p.abs() / mass * w.eval(l - t * p / mass, p))
        })
        .collect();
    let tg = Grid1D::trapezoid(times.to_vec())?;
    let detected: f64 = tg.weights().iter().zip(&density).map(|(a, b)| a * b).sum();
    Ok(DensityCurve { times: times.to_vec(), weights: tg.weights().to_vec(), density, no_detection: (1.0 - detected).clamp(0.0, 1.0) })
}

/// Z[μ] = ∫dP ψ̃(P − μm/2P) ψ̃*(P + μm/2P) e^{−iμmL/P} η(2mμ/P²), the Fourier
/// transform ∫dt e^{−iμt} P(t) over the whole time axis.
pub fn generating_function(state: &MomentumState, det: &DetectorConfig, family: &EtaFamily, mu: f64) -> Result<Complex64> {
    generating_element(state, state, det, family, mu)
}

/// Off-diagonal form of [`generating_function`]: ψ̃ → a in the first slot and
/// ψ̃* → b* in the second, so that the element pairs with ⟨b|Π|a⟩.
pub(crate) fn generating_element(
    a: &MomentumState,
    b: &MomentumState,
    det: &DetectorConfig,
    family: &EtaFamily,
    mu: f64,
) -> Result<Complex64> {
    det.validate()?;
    let m = a.mass();
    let (ka, kb) = (a.grid().first().min(b.grid().first()), a.grid().last().max(b.grid().last()));
    if ka <= 0.0 {
        return invalid("generating function needs strictly positive momentum support");
    }
    let x_arg_max = 2.0 * m * mu.abs() / (ka * ka);
    if x_arg_max >= family.domain {
        return invalid(format!("η family {} undefined at μ/H = {x_arg_max}", family.name));
    }
    let (xa, xb) = (a.x_range().0.min(b.x_range().0), a.x_range().1.max(b.x_range().1));
    let rate = mu.abs() * m * (det.l.abs() + xa.abs().max(xb.abs())) / (ka * ka) + 1.0;
    let grid = OscillationBudget::with_rate(rate)?.grid(ka, kb, 16, 8)?;
    let s2 = det.smear_sigma * det.smear_sigma;
    let mut z = Complex64::new(0.0, 0.0);
    for (&p, &w) in grid.nodes().iter().zip(grid.weights()) {
        let q = mu * m / p;
        let (k, k2) = (p - 0.5 * q, p + 0.5 * q);
        if k <= 0.0 {
            continue;
        }
        let amp = a.amplitude_at(k)? * b.amplitude_at(k2)?.conj();
        let (ek, ek2) = (0.5 * k * k / m, 0.5 * k2 * k2 / m);
        let mut v = (family.eval)(2.0 * m * mu / (p * p)) * det.absorption.rate(0.5 * (ek + ek2));
        if s2 > 0.0 {
            v *= (-0.5 * s2 * mu * mu).exp();
        }
        z += amp * Complex64::from_polar(w * v, -mu * m * det.l / p);
    }
    Ok(z)
}

/// Mean and variance of a density curve.
pub fn arrival_moments(curve: &DensityCurve) -> Result<(f64, f64)> {
    if curve.no_detection >= 1e-4 {
        return invalid(format!("no-detection mass {:e} too large for moments", curve.no_detection));
    }
    let total = curve.detected();
    let missing = 1.0 - total - curve.no_detection;
    if missing.abs() > 1e-4 {
        return Err(ToaError::Guard(format!("time grid misses {missing:e} of the probability in its tails")));
    }
    let mut m1 = 0.0;
    for ((t, w), p) in curve.times.iter().zip(&curve.weights).zip(&curve.density) {
        m1 += w * p * t;
    }
    m1 /= total;
    let mut var = 0.0;
    for ((t, w), p) in curve.times.iter().zip(&curve.weights).zip(&curve.density) {
        var += w * p * (t - m1).powi(2);
    }
    Ok((m1, var / total))
}

/// Convolution with f(t) = e^{−t²/2σ²}/√(2πσ²).
pub fn smear_density(curve: &DensityCurve, sigma: f64) -> Result<DensityCurve> {
    if !(sigma >= 0.0) {
        return invalid("sigma must be non-negative");
    }
    if sigma == 0.0 {
        return Ok(curve.clone());
    }
    let norm = 1.0 / ((2.0 * PI).sqrt() * sigma);
    let density = curve
        .times
        .par_iter()
        .map(|&t| {
            curve
                .times
                .iter()
                .zip(&curve.weights)
                .zip(&curve.density)
                .map(|((&s, w), p)| w * p * norm * (-0.5 * ((t - s) / sigma).powi(2)).exp())
                .sum()
        })
        .collect();
    Ok(DensityCurve { density, ..curve.clone() })
}

/// ν = β/(mL²) and τ = L√(mβ).
pub fn discriminability(beta: f64, mass: f64, l: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && mass > 0.0 && l > 0.0) {
        return invalid("beta, mass and L must be positive");
    }
    Ok((beta / (mass * l * l), l * (mass * beta).sqrt()))
}

/// Phase-space moments entering the moment identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpaceMoments {
    /// ⟨T_c⟩ under the Wigner function.
    pub mean_tc: f64,
    /// ⟨T_c²⟩ − ⟨T_c⟩².
    pub var_tc: f64,
    /// ⟨H⁻²⟩
    pub mean_inv_h2: f64,
    /// (ΔH)²
    pub var_h: f64,
}

/// Second-order Richardson central differences of f at 0: (f'(0), f''(0)).
pub(crate) fn richardson_derivatives(f: impl Fn(f64) -> Result<Complex64>, h: f64) -> Result<(Complex64, Complex64)> {
    let f0 = f(0.0)?;
    let d = |h: f64| -> Result<(Complex64, Complex64)> {
        let (fp, fm) = (f(h)?, f(-h)?);
        Ok(((fp - fm) / (2.0 * h), (fp - f0 * 2.0 + fm) / (h * h)))
    };
    let (a1, a2) = d(h)?;
    let (b1, b2) = d(0.5 * h)?;
    Ok(((b1 * 4.0 - a1) / 3.0, (b2 * 4.0 - a2) / 3.0))
}

/// Rejects states whose momentum grid reaches too close to k = 0 for ⟨H⁻²⟩.
pub(crate) fn check_moment_support(state: &MomentumState) -> Result<()> {
    let kbar = state.mean_momentum();
    if state.grid().first() < 1e-3 * kbar || kbar <= 0.0 {
        return invalid("state samples momenta below 1e-3 of its mean; ⟨H⁻²⟩ diverges");
    }
    Ok(())
}

/// Rough arrival-time spread, used to scale finite-difference steps.
pub(crate) fn arrival_time_scale(state: &MomentumState, l: f64) -> f64 {
    let m = state.mass();
    let kbar = state.mean_momentum();
    let dk = (state.momentum_expectation(|k| k * k) - kbar * kbar).max(0.0).sqrt();
    let (xa, xb) = state.x_range();
    let xbar = 0.5 * (xa + xb);
    let dx = (xb - xa) / 16.0;
    (m * dx / kbar + m * (l - xbar).abs() * dk / (kbar * kbar)).max(1e-12)
}

/// Classical-time moments from the η = 1 generating function and energy moments
/// from momentum quadrature.
pub fn phase_space_moments(state: &MomentumState, l: f64) -> Result<PhaseSpaceMoments> {
    check_moment_support(state)?;
    let m = state.mass();
    let det = DetectorConfig::ideal(l);
    let current = EtaFamily::current();
    let (xa, xb) = state.x_range();
    let t_ref = m * (l - 0.5 * (xa + xb)) * state.momentum_expectation(|k| 1.0 / k);
    let h = 0.05 / arrival_time_scale(state, l);
    let (d1, d2) = richardson_derivatives(
        |mu| Ok(generating_function(state, &det, &current, mu)? * Complex64::from_polar(1.0, mu * t_ref)),
        h,
    )?;
    let shifted_mean = (Complex64::i() * d1).re;
    let shifted_second = -d2.re;
    let h1 = state.momentum_expectation(|k| 0.5 * k * k / m);
    let h2 = state.momentum_expectation(|k| (0.5 * k * k / m).powi(2));
    Ok(PhaseSpaceMoments {
        mean_tc: t_ref + shifted_mean,
        var_tc: shifted_second - shifted_mean * shifted_mean,
        mean_inv_h2: state.momentum_expectation(|k| (2.0 * m / (k * k)).powi(2)),
        var_h: h2 - h1 * h1,
    })
}

/// Time grid of `n` points covering mean ± `width` standard deviations of the
/// classical arrival time of a packet-like state.
pub fn arrival_window(state: &MomentumState, l: f64, width: f64, n: usize) -> Result<Vec<f64>> {
    let m = state.mass();
    let (xa, xb) = state.x_range();
    let t_ref = m * (l - 0.5 * (xa + xb)) * state.momentum_expectation(|k| 1.0 / k);
    let s = arrival_time_scale(state, l);
    Ok(Grid1D::uniform(n, t_ref - width * s, t_ref + width * s)?.nodes().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::GaussianPacket;

    #[test]
    fn eta_values() {
        for f in [EtaFamily::qtp(), EtaFamily::kijowski(), EtaFamily::current()] {
            assert_eq!(eta_eval(&f, 0.0).unwrap(), 1.0);
        }
        assert!((eta_eval(&EtaFamily::qtp(), 4.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(eta_eval(&EtaFamily::kijowski(), 4.0 - 1e-12).unwrap() < 1e-6);
        assert!(eta_eval(&EtaFamily::kijowski(), 4.0).is_err());
    }

    #[test]
    fn kernel_diagonal_and_hermiticity() {
        let f = EtaFamily::qtp();
        let d = povm_kernel(&f, 3.0, 1.7, 2.5, 2.5, 1.3).unwrap();
        assert!((d.norm() - 2.5 / (2.0 * PI * 1.3)).abs() < 1e-15);
        let a = povm_kernel(&f, 3.0, 1.7, 2.5, 4.0, 1.3).unwrap();
        let b = povm_kernel(&f, 3.0, 1.7, 4.0, 2.5, 1.3).unwrap();
        assert!((a - b.conj()).norm() < 1e-15);
        let want = ((2.5f64.powi(2) + 16.0) / (2.0 * 1.3 * 1.3)).sqrt() / (2.0 * PI);
        assert!((a.norm() - want).abs() < 1e-14);
        assert!(povm_kernel(&f, 0.0, 0.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn packet_density_is_normalized() {
        let p = GaussianPacket::standard(0.0, 10.0);
        let times: Vec<f64> = (0..801).map(|i| -1.0 + 4.0 * i as f64 / 800.0).collect();
        let s = MomentumState::packet_for_detection(&p, 10.0, (-1.0, 3.0)).unwrap();
        let c = arrival_density(&s, &DetectorConfig::ideal(10.0), &EtaFamily::qtp(), &times).unwrap();
        assert!((c.detected() + c.no_detection - 1.0).abs() < 1e-6, "{}", c.detected());
        assert!(c.no_detection < 1e-6);
    }

    #[test]
    fn coarse_grid_is_a_budget_violation() {
        let p = GaussianPacket::standard(0.0, 10.0);
        let s = MomentumState::from_packet(&p, 1).unwrap();
        let err = arrival_density(&s, &DetectorConfig::ideal(500.0), &EtaFamily::qtp(), &[49.0, 50.0, 51.0]).unwrap_err();
        assert!(matches!(err, ToaError::BudgetViolation { .. }));
    }

    #[test]
    fn smear_identity_and_mass() {
        let times: Vec<f64> = (0..401).map(|i| i as f64 * 0.05).collect();
        let g = Grid1D::trapezoid(times.clone()).unwrap();
        let density: Vec<f64> = times.iter().map(|t| (-(t - 10.0).powi(2)).exp() / PI.sqrt()).collect();
        let c = DensityCurve { times, weights: g.weights().to_vec(), density, no_detection: 0.0 };
        assert_eq!(smear_density(&c, 0.0).unwrap(), c);
        let s = smear_density(&c, 0.7).unwrap();
        assert!((s.detected() - c.detected()).abs() < 1e-10);
    }

    #[test]
    fn discriminability_scaling() {
        let (nu, _) = discriminability(2.0, 0.5, 2.0).unwrap();
        assert!((nu - 1.0).abs() < 1e-15);
        let (nu2, _) = discriminability(2.0, 0.5, 1.0).unwrap();
        assert!((nu2 - 4.0).abs() < 1e-14);
    }
}
