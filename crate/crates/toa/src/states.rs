//! Single- and two-particle states in the momentum representation.
//!
//! Fourier convention: ψ̃(k) = (2π)^{-1/2} ∫dx e^{-ikx} ψ(x). A packet
//! ψ(x) = φ(x − x₀)e^{ip₀x} with Gaussian φ of width σ_X then has
//! ψ̃(k) = (2σ_X²/π)^{1/4} exp[−σ_X²(k−p₀)²] exp[−i(k−p₀)x₀].

use crate::quadrature::{composite_gauss_legendre, gauss_legendre, Grid1D, OscillationBudget};
use crate::{invalid, Complex64, Result};
use std::f64::consts::PI;
use std::sync::Arc;

/// Overlap modulus above which two factors are not treated as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Largest number of single-particle factors per particle in a two-particle state.
pub const MAX_RANK: usize = 16;
const NORM_TOL: f64 = 1e-8;
const GRID_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x: f64,
    pub mass: f64,
}

impl GaussianPacket {
    pub fn new(x0: f64, p0: f64, sigma_x: f64, mass: f64) -> Result<Self> {
        if !(sigma_x > 0.0) || !(mass > 0.0) || !x0.is_finite() || !p0.is_finite() {
            return invalid("packet needs finite centre, sigma_x > 0 and mass > 0");
        }
        Ok(Self { x0, p0, sigma_x, mass })
    }

    /// Unit width and mass.
    pub fn standard(x0: f64, p0: f64) -> Self {
        Self { x0, p0, sigma_x: 1.0, mass: 1.0 }
    }

    pub fn momentum_spread(&self) -> f64 {
        0.5 / self.sigma_x
    }

    pub fn mode(&self) -> HermitePacket {
        HermitePacket { order: 0, x0: self.x0, p0: self.p0, sigma_x: self.sigma_x, mass: self.mass, back_time: 0.0 }
    }

    /// Default momentum window p₀ ± 8 standard deviations.
    pub fn momentum_window(&self) -> (f64, f64) {
        self.mode().momentum_window()
    }

    /// Mean arrival time m(L − x₀)/p₀ of the classical trajectory.
    pub fn classical_arrival(&self, l: f64) -> f64 {
        self.mass * (l - self.x0) / self.p0
    }
}

/// ψ̃(k) of a Gaussian packet.
pub fn packet_momentum_amplitude(packet: &GaussianPacket, k: f64) -> Complex64 {
    packet.mode().amplitude(k)
}

/// Hermite function of order `order` in momentum, centred on (x₀, p₀), with
/// free evolution backwards by `back_time` (amplitude multiplied by e^{iε_k t}).
/// Order 0 with zero back_time is the Gaussian packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermitePacket {
    pub order: usize,
    pub x0: f64,
    pub p0: f64,
    pub sigma_x: f64,
    pub mass: f64,
    pub back_time: f64,
}

impl HermitePacket {
    pub fn amplitude(&self, k: f64) -> Complex64 {
        let s = self.sigma_x;
        let u = std::f64::consts::SQRT_2 * s * (k - self.p0);
        let h = hermite_function(self.order, u) * (std::f64::consts::SQRT_2 * s).sqrt();
        let phase = -(k - self.p0) * self.x0 + 0.5 * k * k / self.mass * self.back_time;
        Complex64::from_polar(h, phase)
    }

    fn half_width(&self) -> f64 {
        (8.0 + 2.0 * ((2 * self.order + 1) as f64).sqrt() - 2.0) / (2.0 * self.sigma_x)
    }

    pub fn momentum_window(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.p0 - h, self.p0 + h)
    }

    /// Range of −d arg ψ̃/dk over the momentum window, widened by the spatial extent.
    fn position_window(&self) -> (f64, f64) {
        let (ka, kb) = self.momentum_window();
        let xa = self.x0 - ka * self.back_time / self.mass;
        let xb = self.x0 - kb * self.back_time / self.mass;
        let w = self.sigma_x * (8.0 + 2.0 * ((2 * self.order + 1) as f64).sqrt());
        (xa.min(xb) - w, xa.max(xb) + w)
    }
}

/// Orthonormal Hermite function φₙ(u) = (2ⁿn!√π)^{-1/2} Hₙ(u) e^{-u²/2}.
pub fn hermite_function(n: usize, u: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25) * (-0.5 * u * u).exp();
    for j in 1..=n {
        let jf = j as f64;
        let next = (2.0 / jf).sqrt() * u * cur - ((jf - 1.0) / jf).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Pure single-particle state sampled on a momentum grid. States built from
/// packets keep their analytic form so they can be evaluated off the grid.
#[derive(Debug, Clone)]
pub struct MomentumState {
    grid: Grid1D,
    amplitudes: Vec<Complex64>,
    mass: f64,
    modes: Vec<(Complex64, HermitePacket)>,
    x_range: (f64, f64),
}

impl MomentumState {
    /// Generic sampled state; `x_range` bounds the position support (it sets
    /// the phase-rate estimate of the amplitude).
    pub fn from_samples(grid: Grid1D, amplitudes: Vec<Complex64>, mass: f64, x_range: (f64, f64)) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return invalid("amplitude count differs from grid size");
        }
        if !(mass > 0.0) {
            return invalid("mass must be positive");
        }
        let s = Self { grid, amplitudes, mass, modes: Vec::new(), x_range };
        s.check_norm()?;
        Ok(s)
    }

    /// Normalized combination Σ cᵢ·modeᵢ sampled on `grid`.
    pub fn from_modes(modes: Vec<(Complex64, HermitePacket)>, grid: Grid1D) -> Result<Self> {
        if modes.is_empty() {
            return invalid("state needs at least one mode");
        }
        let mass = modes[0].1.mass;
        if modes.iter().any(|(_, m)| (m.mass - mass).abs() > 1e-14 * mass) {
            return invalid("all modes of one state must share a mass");
        }
        let amplitudes: Vec<Complex64> =
            grid.nodes().iter().map(|&k| modes.iter().map(|(c, m)| c * m.amplitude(k)).sum()).collect();
        let norm: f64 = grid.weights().iter().zip(&amplitudes).map(|(w, a)| w * a.norm_sqr()).sum();
        if !(norm > 1e-300) {
            return invalid("state has zero norm on its grid");
        }
        let scale = 1.0 / norm.sqrt();
        let amplitudes = amplitudes.into_iter().map(|a| a * scale).collect();
        let modes = modes.into_iter().map(|(c, m)| (c * scale, m)).collect::<Vec<_>>();
        let x_range = modes.iter().map(|(_, m)| m.position_window()).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |acc, w| (acc.0.min(w.0), acc.1.max(w.1)),
        );
        Ok(Self { grid, amplitudes, mass, modes, x_range })
    }

    /// Gaussian packet on its default ±8σ_P window with `panels` 16-node panels.
    pub fn from_packet(packet: &GaussianPacket, panels: usize) -> Result<Self> {
        let (a, b) = packet.momentum_window();
        Self::from_modes(vec![(Complex64::new(1.0, 0.0), packet.mode())], composite_gauss_legendre(panels, GRID_ORDER, a, b)?)
    }

    /// Modes sampled on their union momentum window, with enough nodes to resolve
    /// arrival kernels at detector positions up to `l` and times in `t_range`.
    pub fn for_detection(modes: Vec<(Complex64, HermitePacket)>, l: f64, t_range: (f64, f64)) -> Result<Self> {
        let (a, b) = union_window(modes.iter().map(|(_, m)| m));
        let x_range = modes.iter().map(|(_, m)| m.position_window()).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |acc, w| (acc.0.min(w.0), acc.1.max(w.1)),
        );
        let mass = modes.first().map(|m| m.1.mass).unwrap_or(1.0);
        let rate = arrival_phase_rate((a, b), x_range, &[l], t_range, mass);
        let budget = OscillationBudget::with_rate(rate)?;
        let grid = budget.grid(a, b, GRID_ORDER, 4)?;
        Self::from_modes(modes, grid)
    }

    pub fn packet_for_detection(packet: &GaussianPacket, l: f64, t_range: (f64, f64)) -> Result<Self> {
        Self::for_detection(vec![(Complex64::new(1.0, 0.0), packet.mode())], l, t_range)
    }

    /// Same analytic state on a different grid.
    pub fn resampled(&self, grid: Grid1D) -> Result<Self> {
        if self.modes.is_empty() {
            return invalid("state has no analytic form to resample");
        }
        Self::from_modes(self.modes.clone(), grid)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn modes(&self) -> &[(Complex64, HermitePacket)] {
        &self.modes
    }

    pub fn is_analytic(&self) -> bool {
        !self.modes.is_empty()
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.x_range
    }

    pub fn momentum_range(&self) -> (f64, f64) {
        (self.grid.first(), self.grid.last())
    }

    /// ψ̃(k) off the grid; requires an analytic state.
    pub fn amplitude_at(&self, k: f64) -> Result<Complex64> {
        if self.modes.is_empty() {
            return invalid("state has no analytic form; off-grid evaluation unavailable");
        }
        Ok(self.modes.iter().map(|(c, m)| c * m.amplitude(k)).sum())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.grid.weights().iter().zip(&self.amplitudes).map(|(w, a)| w * a.norm_sqr()).sum()
    }

    fn check_norm(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return invalid(format!("state norm {n} differs from 1 by more than {NORM_TOL:e}"));
        }
        Ok(())
    }

    /// Probability carried by k > 0.
    pub fn positive_mass(&self) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(self.grid.weights())
            .zip(&self.amplitudes)
            .filter(|((&k, _), _)| k > 0.0)
            .map(|((_, w), a)| w * a.norm_sqr())
            .sum()
    }

    /// ⟨f(k)⟩ over |ψ̃|².
    pub fn momentum_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(self.grid.weights())
            .zip(&self.amplitudes)
            .map(|((&k, w), a)| w * a.norm_sqr() * f(k))
            .sum()
    }

    pub fn mean_momentum(&self) -> f64 {
        self.momentum_expectation(|k| k)
    }

    /// Mean and standard deviation of the kinetic energy.
    pub fn energy_stats(&self) -> (f64, f64) {
        let m = self.mass;
        let e1 = self.momentum_expectation(|k| 0.5 * k * k / m);
        let e2 = self.momentum_expectation(|k| (0.5 * k * k / m).powi(2));
        (e1, (e2 - e1 * e1).max(0.0).sqrt())
    }

    /// ⟨self|other⟩ on a shared grid, or by analytic evaluation on a union grid.
    pub fn overlap(&self, other: &MomentumState) -> Result<Complex64> {
        if self.grid == other.grid {
            return Ok(self
                .grid
                .weights()
                .iter()
                .zip(&self.amplitudes)
                .zip(&other.amplitudes)
                .map(|((w, a), b)| a.conj() * b * *w)
                .sum());
        }
        if !self.is_analytic() || !other.is_analytic() {
            return invalid("overlap of sampled states needs a shared grid");
        }
        let (a, b) = union_window(self.modes.iter().chain(&other.modes).map(|(_, m)| m));
        let spread = (self.x_range.1 - other.x_range.0).abs().max((other.x_range.1 - self.x_range.0).abs());
        let budget = OscillationBudget::with_rate(spread)?;
        let grid = budget.grid(a, b, GRID_ORDER, 8)?;
        let mut s = Complex64::new(0.0, 0.0);
        for (&k, &w) in grid.nodes().iter().zip(grid.weights()) {
            s += self.amplitude_at(k)?.conj() * other.amplitude_at(k)? * w;
        }
        Ok(s)
    }
}

/// Hull of the momentum windows of several modes.
pub fn union_window<'a>(modes: impl Iterator<Item = &'a HermitePacket>) -> (f64, f64) {
    modes.map(|m| m.momentum_window()).fold((f64::INFINITY, f64::NEG_INFINITY), |acc, w| (acc.0.min(w.0), acc.1.max(w.1)))
}

/// Largest |d/dk| of the arrival phase k(L − x) − ε_k t over the given boxes.
pub fn arrival_phase_rate(k_range: (f64, f64), x_range: (f64, f64), ls: &[f64], t_range: (f64, f64), mass: f64) -> f64 {
    let mut rate: f64 = 0.0;
    for &l in ls {
        for &k in &[k_range.0, k_range.1] {
            for &x in &[x_range.0, x_range.1] {
                for &t in &[t_range.0, t_range.1] {
                    rate = rate.max((l - x - k * t / mass).abs());
                }
            }
        }
    }
    rate
}

/// Normalized c₁s₁ + c₂s₂ on the shared grid of the two states.
pub fn superpose(c1: Complex64, s1: &MomentumState, c2: Complex64, s2: &MomentumState) -> Result<MomentumState> {
    if s1.grid != s2.grid {
        return invalid("superposed states must share a momentum grid");
    }
    if (s1.mass - s2.mass).abs() > 1e-14 * s1.mass {
        return invalid("superposed states must share a mass");
    }
    let amps: Vec<Complex64> = s1.amplitudes.iter().zip(&s2.amplitudes).map(|(a, b)| c1 * a + c2 * b).collect();
    let norm: f64 = s1.grid.weights().iter().zip(&amps).map(|(w, a)| w * a.norm_sqr()).sum();
    if !(norm > 1e-24) {
        return invalid("superposition has zero norm");
    }
    let scale = 1.0 / norm.sqrt();
    let amplitudes = amps.into_iter().map(|a| a * scale).collect();
    let modes = if s1.is_analytic() && s2.is_analytic() {
        s1.modes
            .iter()
            .map(|(c, m)| (c * c1 * scale, *m))
            .chain(s2.modes.iter().map(|(c, m)| (c * c2 * scale, *m)))
            .collect()
    } else {
        Vec::new()
    };
    let x_range = (s1.x_range.0.min(s2.x_range.0), s1.x_range.1.max(s2.x_range.1));
    Ok(MomentumState { grid: s1.grid.clone(), amplitudes, mass: s1.mass, modes, x_range })
}

/// Single-particle ensemble ρ = Σ λ_q |χ_q⟩⟨χ_q| on a shared momentum grid.
/// Weights may be negative when the input matrix is not positive.
#[derive(Debug, Clone)]
pub struct MixedState {
    grid: Grid1D,
    mass: f64,
    x_range: (f64, f64),
    components: Vec<(f64, Vec<Complex64>)>,
}

impl MixedState {
    pub fn pure(state: &MomentumState) -> Self {
        Self {
            grid: state.grid.clone(),
            mass: state.mass,
            x_range: state.x_range,
            components: vec![(1.0, state.amplitudes.clone())],
        }
    }

    /// Ensemble from density-matrix entries ρ(kᵢ,kⱼ) on the grid nodes.
    pub fn from_density_matrix(
        grid: Grid1D,
        mass: f64,
        x_range: (f64, f64),
        rho: impl Fn(usize, usize) -> Complex64 + Sync,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return invalid("mass must be positive");
        }
        let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
        let factor = crate::povm::HermitianFactor::build(grid.len(), |i, j| rho(i, j) * (sw[i] * sw[j]));
        let components = factor
            .terms()
            .into_iter()
            .map(|(s, h)| (s, h.iter().zip(&sw).map(|(z, w)| z / *w).collect()))
            .collect();
        Ok(Self { grid, mass, x_range, components })
    }

    /// Thermal ensemble sampled on `grid`, which must lie in k > 0.
    pub fn thermal(state: &ThermalState, grid: Grid1D) -> Result<Self> {
        if grid.first() <= 0.0 {
            return invalid("thermal grid must lie in k > 0");
        }
        let k = grid.nodes().to_vec();
        let s2 = state.sigma_x * state.sigma_x;
        let th = *state;
        let w = 8.0 * state.sigma_x;
        Self::from_density_matrix(grid, state.mass, (-w, w), move |i, j| {
            let v = th.momentum_density(0.5 * (k[i] + k[j])) * (-0.5 * s2 * (k[i] - k[j]).powi(2)).exp();
            Complex64::new(v, 0.0)
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.x_range
    }

    pub fn components(&self) -> &[(f64, Vec<Complex64>)] {
        &self.components
    }

    pub fn trace(&self) -> f64 {
        self.momentum_expectation(|_| 1.0)
    }

    pub fn momentum_expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let g = &self.grid;
        self.components
            .iter()
            .map(|(l, a)| {
                l * g.nodes().iter().zip(g.weights()).zip(a).map(|((&k, w), z)| w * z.norm_sqr() * f(k)).sum::<f64>()
            })
            .sum()
    }
}

/// Phase-space quasi-distribution with a bounding box outside which it is negligible.
#[derive(Clone)]
pub struct WignerFunction {
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// (x_min, x_max, p_min, p_max)
    pub support_box: (f64, f64, f64, f64),
}

impl std::fmt::Debug for WignerFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WignerFunction").field("support_box", &self.support_box).finish()
    }
}

impl WignerFunction {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, support_box: (f64, f64, f64, f64)) -> Self {
        Self { eval: Arc::new(eval), support_box }
    }

    pub fn eval(&self, x: f64, p: f64) -> f64 {
        (self.eval)(x, p)
    }

    /// ∬ f(X,P) W(X,P) over the support box with `n` Gauss–Legendre panels per axis.
    pub fn average(&self, panels: usize, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        let (xa, xb, pa, pb) = self.support_box;
        let gx = composite_gauss_legendre(panels, GRID_ORDER, xa, xb)?;
        let gp = composite_gauss_legendre(panels, GRID_ORDER, pa, pb)?;
        let mut s = 0.0;
        for (&x, &wx) in gx.nodes().iter().zip(gx.weights()) {
            for (&p, &wp) in gp.nodes().iter().zip(gp.weights()) {
                s += wx * wp * f(x, p) * self.eval(x, p);
            }
        }
        Ok(s)
    }

    pub fn total(&self, panels: usize) -> Result<f64> {
        self.average(panels, |_, _| 1.0)
    }
}

/// W(X,P) = (1/π) exp[−(X−x₀)²/(2σ²) − 2σ²(P−p₀)²].
pub fn packet_wigner(packet: &GaussianPacket) -> WignerFunction {
    let GaussianPacket { x0, p0, sigma_x: s, .. } = *packet;
    let sp = 0.5 / s;
    WignerFunction::new(
        move |x, p| (-(x - x0).powi(2) / (2.0 * s * s) - 2.0 * s * s * (p - p0).powi(2)).exp() / PI,
        (x0 - 8.0 * s, x0 + 8.0 * s, p0 - 8.0 * sp, p0 + 8.0 * sp),
    )
}

/// Direct Wigner transform W(X,P) = (1/2π)∫dq ψ̃(P+q/2)ψ̃*(P−q/2)e^{iqX} of an analytic state.
pub fn state_wigner(state: &MomentumState) -> Result<WignerFunction> {
    if !state.is_analytic() {
        return invalid("Wigner transform needs an analytic state");
    }
    let (ka, kb) = state.momentum_range();
    let (xa, xb) = state.x_range();
    let qmax = kb - ka;
    let rate = xa.abs().max(xb.abs()) + 0.5 * (xb - xa);
    let budget = OscillationBudget::with_rate(rate)?;
    let qgrid = budget.grid(-qmax, qmax, GRID_ORDER, 8)?;
    let modes = state.modes.clone();
    let amp = move |k: f64| -> Complex64 { modes.iter().map(|(c, m)| c * m.amplitude(k)).sum() };
    Ok(WignerFunction::new(
        move |x, p| {
            let mut s = Complex64::new(0.0, 0.0);
            for (&q, &w) in qgrid.nodes().iter().zip(qgrid.weights()) {
                s += amp(p + 0.5 * q) * amp(p - 0.5 * q).conj() * Complex64::from_polar(w, q * x);
            }
            s.re / (2.0 * PI)
        },
        (xa, xb, ka, kb),
    ))
}

/// Thermal ensemble of positive momenta with a Gaussian position profile of
/// mean 0 and standard deviation `sigma_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalState {
    pub beta: f64,
    pub mass: f64,
    pub sigma_x: f64,
}

impl ThermalState {
    pub fn new(beta: f64, mass: f64, sigma_x: f64) -> Result<Self> {
        if !(beta > 0.0) || !(mass > 0.0) || !(sigma_x > 0.0) {
            return invalid("thermal state needs beta, mass and sigma_x positive");
        }
        Ok(Self { beta, mass, sigma_x })
    }

    /// Normalized half-Gaussian √(2β/(πm)) e^{−βP²/(2m)} θ(P).
    pub fn momentum_density(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        (2.0 * self.beta / (PI * self.mass)).sqrt() * (-0.5 * self.beta * p * p / self.mass).exp()
    }

    pub fn position_density(&self, x: f64) -> f64 {
        let s = self.sigma_x;
        (-0.5 * x * x / (s * s)).exp() / ((2.0 * PI).sqrt() * s)
    }

    /// Upper momentum cutoff carrying all but ~e^{-32} of the distribution.
    pub fn momentum_cutoff(&self) -> f64 {
        8.0 * (self.mass / self.beta).sqrt()
    }

    /// ρ(k,k') = g((k+k')/2) e^{−σ²(k−k')²/2}, row-major on the grid nodes.
    pub fn density_matrix(&self, grid: &Grid1D) -> Vec<Complex64> {
        let k = grid.nodes();
        let s2 = self.sigma_x * self.sigma_x;
        let mut rho = Vec::with_capacity(k.len() * k.len());
        for &a in k {
            for &b in k {
                let v = self.momentum_density(0.5 * (a + b)) * (-0.5 * s2 * (a - b) * (a - b)).exp();
                rho.push(Complex64::new(v, 0.0));
            }
        }
        rho
    }
}

/// W₀(X,P) = n₀(X) √(2β/(πm)) e^{−βP²/(2m)} θ(P).
pub fn thermal_wigner(state: &ThermalState) -> WignerFunction {
    let st = *state;
    let s = st.sigma_x;
    WignerFunction::new(
        move |x, p| st.position_density(x) * st.momentum_density(p),
        (-8.0 * s, 8.0 * s, 0.0, st.momentum_cutoff()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistics {
    Boson,
    Fermion,
    Distinguishable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Product,
    Symmetric,
    Antisymmetric,
    General,
}

/// |Ψ⟩ = Σᵢⱼ cᵢⱼ |φᵢ⟩⊗|χⱼ⟩ with at most [`MAX_RANK`] factors per particle.
#[derive(Debug, Clone)]
pub struct TwoParticleState {
    pub kind: PairKind,
    factors1: Vec<MomentumState>,
    factors2: Vec<MomentumState>,
    coeffs: Vec<Vec<Complex64>>,
}

impl TwoParticleState {
    /// Low-rank state; normalized on construction.
    pub fn general(
        factors1: Vec<MomentumState>,
        factors2: Vec<MomentumState>,
        coeffs: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        Self::build(PairKind::General, factors1, factors2, coeffs)
    }

    fn build(
        kind: PairKind,
        factors1: Vec<MomentumState>,
        factors2: Vec<MomentumState>,
        coeffs: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        if factors1.is_empty() || factors2.is_empty() {
            return invalid("two-particle state needs factors for both particles");
        }
        if factors1.len() > MAX_RANK || factors2.len() > MAX_RANK {
            return invalid(format!("rank overflow: more than {MAX_RANK} factors per particle"));
        }
        if coeffs.len() != factors1.len() || coeffs.iter().any(|r| r.len() != factors2.len()) {
            return invalid("coefficient matrix shape does not match the factors");
        }
        let mut s = Self { kind, factors1, factors2, coeffs };
        let n = s.norm_sqr()?;
        if !(n > 1e-24) {
            return invalid("two-particle state has zero norm");
        }
        let scale = 1.0 / n.sqrt();
        for row in &mut s.coeffs {
            for c in row.iter_mut() {
                *c *= scale;
            }
        }
        Ok(s)
    }

    pub fn factors1(&self) -> &[MomentumState] {
        &self.factors1
    }

    pub fn factors2(&self) -> &[MomentumState] {
        &self.factors2
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    /// Gram matrices ⟨φₖ|φᵢ⟩ for particle 1 and ⟨χₗ|χⱼ⟩ for particle 2.
    pub fn grams(&self) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
        Ok((gram(&self.factors1)?, gram(&self.factors2)?))
    }

    pub fn norm_sqr(&self) -> Result<f64> {
        let (g1, g2) = self.grams()?;
        let c = &self.coeffs;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..c.len() {
            for j in 0..c[i].len() {
                for k in 0..c.len() {
                    for l in 0..c[k].len() {
                        s += c[k][l].conj() * c[i][j] * g1[k][i] * g2[l][j];
                    }
                }
            }
        }
        Ok(s.re)
    }

    /// Ψ(k₁,k₂) for analytic factors.
    pub fn amplitude(&self, k1: f64, k2: f64) -> Result<Complex64> {
        let mut s = Complex64::new(0.0, 0.0);
        for (i, f) in self.factors1.iter().enumerate() {
            let a = f.amplitude_at(k1)?;
            for (j, g) in self.factors2.iter().enumerate() {
                s += self.coeffs[i][j] * a * g.amplitude_at(k2)?;
            }
        }
        Ok(s)
    }

    /// Factor coefficients of the one-particle reduced density matrix of particle 1:
    /// ρ₁ = Σ rᵢₖ |φᵢ⟩⟨φₖ|.
    pub fn reduced1(&self) -> Result<Vec<Vec<Complex64>>> {
        let (_, g2) = self.grams()?;
        let c = &self.coeffs;
        let n1 = self.factors1.len();
        let mut r = vec![vec![Complex64::new(0.0, 0.0); n1]; n1];
        for i in 0..n1 {
            for k in 0..n1 {
                for j in 0..self.factors2.len() {
                    for l in 0..self.factors2.len() {
                        r[i][k] += c[i][j] * c[k][l].conj() * g2[l][j];
                    }
                }
            }
        }
        Ok(r)
    }

    /// Reduced density matrix of particle 2 in the same form.
    pub fn reduced2(&self) -> Result<Vec<Vec<Complex64>>> {
        let (g1, _) = self.grams()?;
        let c = &self.coeffs;
        let n2 = self.factors2.len();
        let mut r = vec![vec![Complex64::new(0.0, 0.0); n2]; n2];
        for j in 0..n2 {
            for l in 0..n2 {
                for i in 0..self.factors1.len() {
                    for k in 0..self.factors1.len() {
                        r[j][l] += c[i][j] * c[k][l].conj() * g1[k][i];
                    }
                }
            }
        }
        Ok(r)
    }

    /// The two single-particle states of a product or (anti)symmetrized pair.
    pub fn pair_factors(&self) -> Option<(&MomentumState, &MomentumState)> {
        match self.kind {
            PairKind::Product => Some((&self.factors1[0], &self.factors2[0])),
            PairKind::Symmetric | PairKind::Antisymmetric => Some((&self.factors1[0], &self.factors1[1])),
            PairKind::General => None,
        }
    }
}

fn gram(f: &[MomentumState]) -> Result<Vec<Vec<Complex64>>> {
    let n = f.len();
    let mut g = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for k in 0..n {
        for i in 0..n {
            g[k][i] = if i == k { Complex64::new(f[i].norm_sqr(), 0.0) } else { f[k].overlap(&f[i])? };
        }
    }
    Ok(g)
}

/// (ψ₁⊗ψ₂ ± ψ₂⊗ψ₁)/√2 for bosons (+) and fermions (−); plain product otherwise.
pub fn pair_state(s1: &MomentumState, s2: &MomentumState, statistics: Statistics) -> Result<TwoParticleState> {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    match statistics {
        Statistics::Distinguishable => {
            TwoParticleState::build(PairKind::Product, vec![s1.clone()], vec![s2.clone()], vec![vec![one]])
        }
        Statistics::Boson | Statistics::Fermion => {
            if (s1.mass() - s2.mass()).abs() > 1e-14 * s1.mass() {
                return invalid("identical particles must share a mass");
            }
            let ov = s1.overlap(s2)?.norm();
            if ov >= ORTHOGONALITY_TOL {
                return invalid(format!(
                    "identical-particle pair needs orthogonal factors; overlap {ov:e} exceeds {ORTHOGONALITY_TOL:e}"
                ));
            }
            let (sign, kind) = match statistics {
                Statistics::Boson => (1.0, PairKind::Symmetric),
                _ => (-1.0, PairKind::Antisymmetric),
            };
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let factors = vec![s1.clone(), s2.clone()];
            let coeffs = vec![vec![zero, one * h], vec![one * (sign * h), zero]];
            TwoParticleState::build(kind, factors.clone(), factors, coeffs)
        }
    }
}

/// Two-particle state Σₙ √(1−r²) rⁿ hₙ(k₁)hₙ(k₂) built from Hermite modes around
/// (x₀, p₀). Negative `r` anticorrelates the momenta and correlates the positions.
/// The pair is evolved backwards by `back_time` so that the correlation is
/// sharpest at the arrival time. Truncated at [`MAX_RANK`] terms.
pub fn correlated_pair(
    r: f64,
    x0: f64,
    p0: f64,
    sigma_x: f64,
    mass: f64,
    back_time: f64,
    grid_panels: usize,
) -> Result<TwoParticleState> {
    if !(r.abs() < 1.0) {
        return invalid("correlation parameter must satisfy |r| < 1");
    }
    let modes: Vec<HermitePacket> = (0..MAX_RANK)
        .map(|order| HermitePacket { order, x0, p0, sigma_x, mass, back_time })
        .collect();
    let (a, b) = union_window(modes.iter());
    if a <= 0.0 {
        return invalid("correlated pair must have strictly positive momentum support");
    }
    let grid = composite_gauss_legendre(grid_panels, GRID_ORDER, a, b)?;
    let factors = modes
        .iter()
        .map(|m| MomentumState::from_modes(vec![(Complex64::new(1.0, 0.0), *m)], grid.clone()))
        .collect::<Result<Vec<_>>>()?;
    let n = factors.len();
    let mut coeffs = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for (i, row) in coeffs.iter_mut().enumerate() {
        row[i] = Complex64::new((1.0 - r * r).sqrt() * r.powi(i as i32), 0.0);
    }
    TwoParticleState::general(factors.clone(), factors, coeffs)
}

/// One Gauss–Legendre panel grid of `n` nodes on [a, b]; convenience for tests and callers.
pub fn simple_grid(n: usize, a: f64, b: f64) -> Result<Grid1D> {
    gauss_legendre(n, a, b)
}
