//! Two successive arrival-time measurements on one particle.
//!
//! The first detector at L₁ scatters the particle without changing its energy,
//! the second at L₂ absorbs it. With B(E, t₁) = ∬dkdk' δ(ε_k+ε_k'−E)
//! ψ̃(k)ψ̃*(k')⟨k'|Π_{L₁}(t₁)|k⟩ (qtp kernel) the joint density is
//!
//!   P⁽²⁾(t₁, t₂) = ∫dE B(E, t₁) F(E, L₂−L₁, t₂−t₁),
//!
//! with F normalized so that ∫F dτ = 1. The energy shell is parameterized as
//! k = R cos φ, k' = R sin φ with R = √(2mE), which turns the delta function
//! into the Jacobian m.

use crate::quadrature::{airy_ai, airy_ai_prime, composite_gauss_legendre, gauss_legendre, Grid1D, OscillationBudget};
use crate::states::{MixedState, MomentumState, WignerFunction};
use crate::toa_pair::DensitySurface;
use crate::toa_single::{check_time_spacing, check_times, DensityCurve};
use crate::{guard, invalid, Complex64, Result, ToaError};
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};
use std::sync::OnceLock;

/// F is evaluated by direct quadrature while |Eτ| + √(mE)ℓ stays below this.
pub const DIRECT_PHASE_LIMIT: f64 = 4000.0;
/// Half-width of the band around γ = 1 where the Airy form is used.
pub const AIRY_BAND: f64 = 0.1;
/// Stationary phase is refused for γ in (1 − SPA_EDGE, 1], where B(γ) → 0.
pub const SPA_EDGE: f64 = 1e-3;

const PANEL: usize = 16;
/// 16-node panels are converged at four nodes per oscillation period.
const NODES_PER_PERIOD: usize = 4;
const F_NODE_CAP: usize = 1 << 21;
/// Phasor recurrences are re-seeded after this many steps.
const RESYNC: usize = 64;
/// Shell nodes where |B| is below this fraction of the row maximum are skipped.
/// Number of independent partial sums over the energy shell.
const SPLITS: usize = 16;
const SHELL_CUTOFF: f64 = 1e-16;

fn reference_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let g = gauss_legendre(PANEL, -1.0, 1.0).expect("reference rule");
        (g.nodes().to_vec(), g.weights().to_vec())
    })
}

/// Energy E, detector separation ℓ and mass of one F evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FKernelParams {
    pub energy: f64,
    pub ell: f64,
    pub mass: f64,
}

impl FKernelParams {
    pub fn new(energy: f64, ell: f64, mass: f64) -> Result<Self> {
        for (name, v) in [("energy", energy), ("ell", ell), ("mass", mass)] {
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("F kernel needs a positive finite {name}, got {v}"));
            }
        }
        Ok(Self { energy, ell, mass })
    }

    /// Classical flight time √(m/E)·ℓ.
    pub fn flight_time(&self) -> f64 {
        (self.mass / self.energy).sqrt() * self.ell
    }

    /// γ = √(m/E)·ℓ/τ.
    pub fn gamma(&self, tau: f64) -> f64 {
        self.flight_time() / tau
    }

    /// D = 2(E⁵/(9mℓ²))^{1/6}.
    pub fn airy_scale(&self) -> f64 {
        2.0 * (self.energy.powi(5) / (9.0 * self.mass * self.ell * self.ell)).powf(1.0 / 6.0)
    }

    /// √(mE)·ℓ, the phase carried by the momentum-transfer term.
    fn shell_phase(&self) -> f64 {
        (self.mass * self.energy).sqrt() * self.ell
    }
}

/// Positive critical point of S(x) = x − γ(√(1+x) − √(1−x)) for 0 < γ ≤ 1.
/// S'(x₀) = 0 gives √(1−x₀²) = (γ²/4)(1 + √(1+8/γ²)).
pub fn stationary_point(gamma: f64) -> Option<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return None;
    }
    let c = 0.25 * gamma * gamma * (1.0 + (1.0 + 8.0 / (gamma * gamma)).sqrt());
    Some((1.0 - c * c).max(0.0).sqrt())
}

/// A(γ) = S(x₀) and B(γ) = |S''(x₀)|(1 − x₀²).
pub fn stationary_coefficients(gamma: f64) -> Option<(f64, f64)> {
    let x = stationary_point(gamma)?;
    let a = x - gamma * ((1.0 + x).sqrt() - (1.0 - x).sqrt());
    let s2 = 0.25 * gamma * ((1.0 - x).powf(-1.5) - (1.0 + x).powf(-1.5));
    Some((a, s2 * (1.0 - x * x)))
}

fn direct_panels(e: f64, tau_max: f64, shell: f64) -> Result<usize> {
    // |dΦ/dθ| ≤ |Eτ| + √(mE)ℓ for Φ(θ) = Eτ sin θ − √(mE)ℓ g(sin θ).
    let rate = e * tau_max + shell;
    let nodes = rate * FRAC_PI_2 * NODES_PER_PERIOD as f64 / (2.0 * PI);
    let panels = ((nodes / PANEL as f64).ceil() as usize).max(2);
    if panels * PANEL > F_NODE_CAP {
        let required = rate * NODES_PER_PERIOD as f64 / (2.0 * PI);
        return Err(ToaError::BudgetViolation { required, actual: F_NODE_CAP as f64 / FRAC_PI_2 });
    }
    Ok(panels)
}

/// θ-nodes on [0, π/2] as (sin θ, g(sin θ), weight), g(x) = √(1+x) − √(1−x)
/// written through u = π/4 − θ/2 to keep accuracy near θ = π/2.
fn theta_nodes(panels: usize) -> Vec<(f64, f64, f64)> {
    let (x, w) = reference_rule();
    let h = FRAC_PI_2 / panels as f64;
    let mut out = Vec::with_capacity(panels * PANEL);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (&t, &wi) in x.iter().zip(w) {
            let th = mid + 0.5 * h * t;
            let u = FRAC_PI_4 - 0.5 * th;
            out.push((th.sin(), SQRT_2 * (u.cos() - u.sin()), 0.5 * h * wi));
        }
    }
    out
}

/// F(E, ℓ, τ) = (E/π)∫₀^{π/2} cos(Eτ S(sin θ)) dθ by Gauss–Legendre
/// quadrature; x = sin θ removes the 1/√(1−x²) endpoint singularity. Any real τ
/// is accepted, S being written as Eτx − √(mE)ℓ g(x).
pub fn f_direct(params: &FKernelParams, tau: f64) -> Result<f64> {
    if !tau.is_finite() {
        return invalid("τ must be finite");
    }
    let e = params.energy;
    let shell = params.shell_phase();
    let nodes = theta_nodes(direct_panels(e, tau.abs(), shell)?);
    let s: f64 = nodes.iter().map(|&(x, g, w)| w * (e * tau * x - shell * g).cos()).sum();
    Ok(e / PI * s)
}

/// √(2E/(πB(γ)τ))·cos(A(γ)Eτ − π/4) for γ ≤ 1 and 0 for γ > 1.
pub fn f_stationary_phase(params: &FKernelParams, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid("stationary phase needs τ > 0");
    }
    let gamma = params.gamma(tau);
    if gamma > 1.0 {
        return Ok(0.0);
    }
    if gamma > 1.0 - SPA_EDGE {
        return invalid(format!("γ = {gamma} is too close to 1 for stationary phase; use the Airy form"));
    }
    let (a, b) = stationary_coefficients(gamma).expect("0 < γ < 1");
    let e = params.energy;
    Ok((2.0 * e / (PI * b * tau)).sqrt() * (a * e * tau - FRAC_PI_4).cos())
}

/// D·Ai[−D(τ − √(m/E)ℓ)].
pub fn f_airy(params: &FKernelParams, tau: f64) -> Result<f64> {
    if !tau.is_finite() {
        return invalid("τ must be finite");
    }
    let d = params.airy_scale();
    Ok(d * airy_ai(-d * (tau - params.flight_time())))
}

/// Asymptotic forms by regime: Airy for |1−γ| ≤ AIRY_BAND, stationary phase
/// below the band, zero above it and for τ ≤ 0.
pub fn f_asymptotic(params: &FKernelParams, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let gamma = params.gamma(tau);
    if gamma > 1.0 + AIRY_BAND {
        Ok(0.0)
    } else if gamma >= 1.0 - AIRY_BAND {
        f_airy(params, tau)
    } else {
        f_stationary_phase(params, tau)
    }
}

/// F with the frozen dispatch: direct quadrature while the phase
/// |Eτ| + √(mE)ℓ is at most [`DIRECT_PHASE_LIMIT`], asymptotic forms beyond.
pub fn f_kernel(params: &FKernelParams, tau: f64) -> Result<f64> {
    if params.energy * tau.abs() + params.shell_phase() <= DIRECT_PHASE_LIMIT {
        f_direct(params, tau)
    } else {
        f_asymptotic(params, tau)
    }
}

/// F̃(E, ℓ, μ) = ∫dτ e^{−iμτ}F = E/√(E²−μ²)·e^{i(√(m(E−μ)) − √(m(E+μ)))ℓ} for
/// |μ| < E, zero for |μ| > E.
pub fn f_tilde(params: &FKernelParams, mu: f64) -> Result<Complex64> {
    let e = params.energy;
    if ((mu.abs() - e) / e).abs() < 1e-9 {
        return invalid(format!("μ = {mu} sits on the branch point ±E"));
    }
    if mu.abs() > e {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let m = params.mass;
    let phase = ((m * (e - mu)).sqrt() - (m * (e + mu)).sqrt()) * params.ell;
    Ok(Complex64::from_polar(e / (e * e - mu * mu).sqrt(), phase))
}

/// F(E, ℓ, τₖ) along increasing τₖ. Points inside the direct regime share one
/// node set, and the quadrature phasors are advanced by e^{iEx Δτ} from one τ to
/// the next instead of being re-evaluated.
fn f_row(params: &FKernelParams, taus: &[f64]) -> Result<Vec<f64>> {
    let e = params.energy;
    let shell = params.shell_phase();
    let direct = |t: f64| e * t.abs() + shell <= DIRECT_PHASE_LIMIT;
    let mut out = taus.iter().map(|&t| if direct(t) { Ok(0.0) } else { f_asymptotic(params, t) }).collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..taus.len()).filter(|&k| direct(taus[k])).collect();
    let Some(&first) = idx.first() else {
        return Ok(out);
    };
    let tau_max = idx.iter().fold(0.0f64, |a, &k| a.max(taus[k].abs()));
    let nodes = theta_nodes(direct_panels(e, tau_max, shell)?);
    // Real and imaginary parts are kept in separate arrays so that the update
    // loop vectorizes.
    let seed = |tau: f64, re: &mut Vec<f64>, im: &mut Vec<f64>| {
        re.clear();
        im.clear();
        for &(x, g, w) in &nodes {
            let (s, c) = (e * tau * x - shell * g).sin_cos();
            re.push(w * c);
            im.push(w * s);
        }
    };
    let (mut zr, mut zi) = (Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len()));
    let (mut sr, mut si) = (Vec::new(), Vec::new());
    seed(taus[first], &mut zr, &mut zi);
    let mut last_dt = f64::NAN;
    for (n, &k) in idx.iter().enumerate() {
        if n > 0 {
            if n % RESYNC == 0 {
                seed(taus[k], &mut zr, &mut zi);
            } else {
                let dt = taus[k] - taus[idx[n - 1]];
                // Reusing the previous step costs a phase error E|Δ − Δ'| per
                // step until the next re-seed.
                if !((dt - last_dt).abs() * e * RESYNC as f64 <= 1e-10) {
                    (sr, si) = nodes.iter().map(|&(x, _, _)| (e * x * dt).sin_cos()).map(|(s, c)| (c, s)).unzip();
                    last_dt = dt;
                }
                for (((a, b), c), d) in zr.iter_mut().zip(zi.iter_mut()).zip(&sr).zip(&si) {
                    let x = *a;
                    *a = x * c - *b * d;
                    *b = x * d + *b * c;
                }
            }
        }
        out[k] = e / PI * lane_sum(&zr);
    }
    Ok(out)
}

/// Σxᵢ with independent partial sums, which keeps the add latency off the
/// critical path.
fn lane_sum(x: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let chunks = x.chunks_exact(8);
    let rest: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter().sum::<f64>() + rest
}

/// The lags τ = t₂ − t₁ at which F is needed, grouped into increasing lists.
/// On commensurate uniform grids many lags coincide and a single merged list
/// is far shorter than one list per t₁.
struct TauLags {
    lists: Vec<Vec<f64>>,
    /// (i, j, position in the list) for each list.
    members: Vec<Vec<(usize, usize, usize)>>,
}

impl TauLags {
    fn new(times1: &[f64], times2: &[f64]) -> Self {
        let (n1, n2) = (times1.len(), times2.len());
        let mut all: Vec<(f64, usize, usize)> =
            (0..n1).flat_map(|i| (0..n2).map(move |j| (times2[j] - times1[i], i, j))).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let span = all[all.len() - 1].0 - all[0].0;
        let tol = 1e-12 * span.max(all[all.len() - 1].0.abs());
        let mut merged = Vec::new();
        let mut members = Vec::with_capacity(all.len());
        for &(tau, i, j) in &all {
            if merged.last().map_or(true, |&last: &f64| tau - last > tol) {
                merged.push(tau);
            }
            members.push((i, j, merged.len() - 1));
        }
        if 2 * merged.len() <= n1 * n2 {
            return Self { lists: vec![merged], members: vec![members] };
        }
        let lists = times1.iter().map(|t1| times2.iter().map(|t2| t2 - t1).collect()).collect();
        let members = (0..n1).map(|i| (0..n2).map(|j| (i, j, j)).collect()).collect();
        Self { lists, members }
    }
}

/// Evaluates B(E, t) = m∫dφ ψ̃(R cos φ)ψ̃*(R sin φ)K(R cos φ, R sin φ; L, t) for
/// an analytic positive-momentum state.
struct Shell<'a> {
    state: &'a MomentumState,
    l: f64,
    k_range: (f64, f64),
    x_span: f64,
}

impl<'a> Shell<'a> {
    fn new(state: &'a MomentumState, l: f64) -> Result<Self> {
        if !state.is_analytic() {
            return invalid("sequential measurements need an analytic state (off-grid amplitudes)");
        }
        let k_range = state.momentum_range();
        if k_range.0 <= 0.0 {
            return invalid("sequential measurements need a strictly positive momentum support");
        }
        let (xa, xb) = state.x_range();
        Ok(Self { state, l, k_range, x_span: (l - xa).abs().max((l - xb).abs()) })
    }

    /// Energies (ε_k + ε_k') reachable with both momenta inside the window.
    fn energy_range(&self) -> (f64, f64) {
        let m = self.state.mass();
        (self.k_range.0.powi(2) / m, self.k_range.1.powi(2) / m)
    }

    fn eval(&self, e: f64, t: f64) -> Result<Complex64> {
        let m = self.state.mass();
        let r = (2.0 * m * e).sqrt();
        let (ka, kb) = self.k_range;
        let lo = (kb / r).min(1.0).acos().max((ka / r).min(1.0).asin());
        let hi = (ka / r).min(1.0).acos().min((kb / r).min(1.0).asin());
        if !(hi > lo) {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let rate = r * SQRT_2 * self.x_span + 2.0 * e * t.abs();
        let grid = OscillationBudget::with_rate(rate)?.grid(lo, hi, PANEL, 8)?;
        let (l, inv) = (self.l, 1.0 / (4.0 * PI * m));
        let mut s = Complex64::new(0.0, 0.0);
        for (&phi, &w) in grid.nodes().iter().zip(grid.weights()) {
            let (k, q) = (r * phi.cos(), r * phi.sin());
            let x = 4.0 * (q - k) / (k + q);
            let amp = (k + q) * inv * (1.0 + x * x / 16.0).sqrt();
            let phase = (k - q) * l - 0.5 * (k * k - q * q) / m * t;
            s += self.state.amplitude_at(k)? * self.state.amplitude_at(q)?.conj() * Complex64::from_polar(w * amp, phase);
        }
        Ok(s * m)
    }
}

fn check_separation(l1: f64, l2: f64) -> Result<f64> {
    if !(l2 > l1) || !l1.is_finite() || !l2.is_finite() {
        return invalid(format!("second detector must lie beyond the first: L1 = {l1}, L2 = {l2}"));
    }
    Ok(l2 - l1)
}

/// Joint density of the first detection at (L₁, t₁) and the second at (L₂, t₂).
pub fn sequential_density(state: &MomentumState, l1: f64, l2: f64, times1: &[f64], times2: &[f64]) -> Result<DensitySurface> {
    let ell = check_separation(l1, l2)?;
    check_times(times1)?;
    check_times(times2)?;
    let shell = Shell::new(state, l1)?;
    let m = state.mass();
    let (_, de) = state.energy_stats();
    check_time_spacing(times1, de)?;
    check_time_spacing(times2, de)?;
    let (t1a, t1b) = (times1[0], times1[times1.len() - 1]);
    let flight = m * ell / state.mean_momentum();
    if times2[times2.len() - 1] < t1b + flight {
        return invalid(format!(
            "t2 grid ends at {} but must extend past t1 = {t1b} plus the flight time {flight}",
            times2[times2.len() - 1]
        ));
    }
    let (ea, eb) = shell.energy_range();
    let tau_max = (times2[times2.len() - 1] - t1a).abs().max((times2[0] - t1b).abs());
    let rate = tau_max + ell * (m / (2.0 * ea)).sqrt();
    let egrid = OscillationBudget::new(rate, NODES_PER_PERIOD)?.grid(ea, eb, PANEL, 8)?;
    let (n1, n2) = (times1.len(), times2.len());
    let b: Vec<Vec<f64>> = times1
        .par_iter()
        .map(|&t1| egrid.nodes().iter().map(|&e| shell.eval(e, t1).map(|z| z.re)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let cuts: Vec<f64> = b.iter().map(|row| SHELL_CUTOFF * row.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect();
    let active: Vec<usize> = (0..egrid.len()).filter(|&k| (0..n1).any(|i| b[i][k].abs() > cuts[i])).collect();
    let lags = TauLags::new(times1, times2);
    // A fixed split, summed in order, keeps the result independent of the thread count.
    let partials = active
        .par_chunks(active.len().div_ceil(SPLITS).max(1))
        .map(|chunk| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; n1 * n2];
            for &k in chunk {
                let (e, w) = (egrid.nodes()[k], egrid.weights()[k]);
                let params = FKernelParams::new(e, ell, m)?;
                for (list, taus) in lags.lists.iter().enumerate() {
                    let f = f_row(&params, taus)?;
                    for &(i, j, idx) in &lags.members[list] {
                        acc[i * n2 + j] += w * b[i][k] * f[idx];
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flat = vec![0.0; n1 * n2];
    for part in &partials {
        flat.iter_mut().zip(part).for_each(|(x, y)| *x += y);
    }
    let density: Vec<Vec<f64>> = flat.chunks(n2).map(|r| r.to_vec()).collect();
    if density.iter().flatten().any(|v| !v.is_finite()) {
        return guard("non-finite sequential density");
    }
    let g1 = Grid1D::trapezoid(times1.to_vec())?;
    let g2 = Grid1D::trapezoid(times2.to_vec())?;
    Ok(DensitySurface {
        times1: times1.to_vec(),
        times2: times2.to_vec(),
        weights1: g1.weights().to_vec(),
        weights2: g2.weights().to_vec(),
        density,
        marginal_no_detect: [0.0, 0.0, (1.0 - state.positive_mass()).max(0.0)],
    })
}

/// Post-detection state ρ_red(q,q') on a momentum grid, in coordinates relative
/// to the detection event: position measured from L and time from t.
#[derive(Debug, Clone)]
pub struct ReducedState {
    grid: Grid1D,
    /// Row-major ρ(qᵢ, qⱼ).
    kernel: Vec<Complex64>,
    trace: f64,
    mass: f64,
}

impl ReducedState {
    fn from_kernel(grid: Grid1D, kernel: Vec<Complex64>, mass: f64) -> Result<Self> {
        let n = grid.len();
        let trace: f64 = (0..n).map(|i| grid.weights()[i] * kernel[i * n + i].re).sum();
        if !(trace > 0.0) || !trace.is_finite() {
            return guard(format!("reduced state has trace {trace}"));
        }
        Ok(Self { grid, kernel, trace, mass })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        self.kernel[i * self.grid.len() + j]
    }

    /// ∫dq ρ(q,q); for the reduction rule this is P⁽¹⁾(L, t).
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// max |ρᵢⱼ − ρ̄ⱼᵢ| relative to max |ρᵢⱼ|.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.grid.len();
        let top = self.kernel.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.element(i, j) - self.element(j, i).conj()).norm());
            }
        }
        worst / top.max(1e-300)
    }

    /// ⟨ε⟩ of the normalized state.
    pub fn mean_energy(&self) -> f64 {
        let n = self.grid.len();
        let g = &self.grid;
        (0..n).map(|i| g.weights()[i] * 0.5 * g.nodes()[i].powi(2) / self.mass * self.kernel[i * n + i].re).sum::<f64>()
            / self.trace
    }

    /// Unit-trace ensemble for the single-detector routines. The position
    /// support is taken as a few inverse widths of the momentum window around
    /// the detection point.
    pub fn to_mixed(&self) -> Result<MixedState> {
        let n = self.grid.len();
        let w = 16.0 / (self.grid.last() - self.grid.first());
        let scale = 1.0 / self.trace;
        MixedState::from_density_matrix(self.grid.clone(), self.mass, (-w, w), |i, j| self.kernel[i * n + j] * scale)
    }
}

/// ρ_red(q,q') = 2√(E/m)·B(E, t) at E = ε_q + ε_q', on a default grid covering
/// (0, √2·k_max].
pub fn reduced_state(state: &MomentumState, l: f64, t: f64) -> Result<ReducedState> {
    let (_, kb) = state.momentum_range();
    let qmax = SQRT_2 * kb;
    let (xa, xb) = state.x_range();
    let rate = (l - xa).abs().max((l - xb).abs()) + kb * t.abs() / state.mass();
    let grid = OscillationBudget::with_rate(rate)?.grid(qmax * 1e-6, qmax, PANEL, 16)?;
    reduced_state_on(state, l, t, grid)
}

/// As [`reduced_state`] on a caller-chosen grid, which must contain the
/// diagonal window of the state.
pub fn reduced_state_on(state: &MomentumState, l: f64, t: f64, grid: Grid1D) -> Result<ReducedState> {
    let shell = Shell::new(state, l)?;
    let m = state.mass();
    let (ka, kb) = shell.k_range;
    if grid.first() <= 0.0 || grid.first() > ka || grid.last() < kb {
        return invalid(format!("reduced-state grid [{}, {}] must lie in q > 0 and cover [{ka}, {kb}]", grid.first(), grid.last()));
    }
    let (ea, eb) = shell.energy_range();
    let (xa, xb) = state.x_range();
    // B(E) is smooth in E; its scale follows the arrival phase mapped to energy.
    let rate_k = (l - xa).abs().max((l - xb).abs()) + kb * t.abs() / m;
    let rate = rate_k * m / ka + 1.0;
    let panels = OscillationBudget::with_rate(rate)?.panels_for(eb - ea, PANEL).max(16);
    let egrid = composite_gauss_legendre(panels, PANEL, ea, eb)?;
    let values: Vec<Complex64> = egrid.nodes().par_iter().map(|&e| shell.eval(e, t)).collect::<Result<_>>()?;
    let table = PanelTable { a: ea, h: (eb - ea) / panels as f64, values };
    let top = table.values.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    // Resolution check against direct evaluations at panel midpoints.
    for p in (0..panels).step_by((panels / 16).max(1)) {
        let e = ea + (p as f64 + 0.5) * table.h;
        if (table.eval(e) - shell.eval(e, t)?).norm() > 1e-8 * top {
            return guard("energy grid too coarse to resolve the energy-shell integral");
        }
    }
    let q = grid.nodes();
    let n = q.len();
    let kernel: Vec<Complex64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let e = 0.5 * (q[idx / n].powi(2) + q[idx % n].powi(2)) / m;
            if e < ea || e > eb {
                Complex64::new(0.0, 0.0)
            } else {
                table.eval(e) * (2.0 * (e / m).sqrt())
            }
        })
        .collect();
    ReducedState::from_kernel(grid, kernel, m)
}

/// Values on composite 16-node Gauss–Legendre panels, evaluated by Lagrange
/// interpolation inside each panel.
struct PanelTable {
    a: f64,
    h: f64,
    values: Vec<Complex64>,
}

impl PanelTable {
    fn eval(&self, e: f64) -> Complex64 {
        let (x, _) = reference_rule();
        let panels = self.values.len() / PANEL;
        let p = (((e - self.a) / self.h).floor().max(0.0) as usize).min(panels - 1);
        let u = 2.0 * (e - self.a - p as f64 * self.h) / self.h - 1.0;
        let v = &self.values[p * PANEL..(p + 1) * PANEL];
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..PANEL {
            let mut li = 1.0;
            for j in 0..PANEL {
                if j != i {
                    li *= (u - x[j]) / (x[i] - x[j]);
                }
            }
            s += v[i] * li;
        }
        s
    }
}

/// The standard sequential-measurement update √Π ρ √Π with Π = Π_L(t) (qtp) on
/// the state's grid. Π is not positive, so its negative eigenvalues are dropped
/// before the square root.
pub fn sandwich_state(state: &MomentumState, l: f64, t: f64) -> Result<ReducedState> {
    let g = state.grid();
    let (k, w) = (g.nodes(), g.weights());
    let n = k.len();
    let m = state.mass();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let amps = state.amplitudes();
    let pi_m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        // Row index carries k', column index k: ⟨k'|Π|k⟩ = K(k, k').
        let x = 4.0 * (k[i] - k[j]) / (k[i] + k[j]);
        let amp = (k[i] + k[j]) / (4.0 * PI * m) * (1.0 + x * x / 16.0).sqrt();
        let phase = (k[j] - k[i]) * l - 0.5 * (k[j] * k[j] - k[i] * k[i]) / m * t;
        Complex64::from_polar(sw[i] * sw[j] * amp, phase)
    });
    let eig = nalgebra::SymmetricEigen::new(pi_m);
    let mut root = nalgebra::DMatrix::<Complex64>::zeros(n, n);
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.eigenvectors.column(c);
            root += (v * v.adjoint()) * Complex64::new(lam.sqrt(), 0.0);
        }
    }
    let rho = nalgebra::DMatrix::from_fn(n, n, |i, j| amps[i] * amps[j].conj() * (sw[i] * sw[j]));
    let out = &root * rho * &root;
    let kernel = (0..n * n).map(|idx| out[(idx / n, idx % n)] / (sw[idx / n] * sw[idx % n])).collect();
    ReducedState::from_kernel(g.clone(), kernel, m)
}

/// P(τ) = ∫dk |ψ̃(k)|² F(2ε_k, L₂−L₁, τ).
pub fn time_of_flight_density(state: &MomentumState, l1: f64, l2: f64, taus: &[f64]) -> Result<DensityCurve> {
    let ell = check_separation(l1, l2)?;
    check_times(taus)?;
    let (ka, kb) = state.momentum_range();
    if ka <= 0.0 {
        return invalid("time of flight needs a strictly positive momentum support");
    }
    let m = state.mass();
    let tau_max = taus.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    // ∂/∂k of Eτx − √(mE)ℓg with E = k²/m.
    let budget = OscillationBudget::new(2.0 * kb * tau_max / m + SQRT_2 * ell, NODES_PER_PERIOD)?;
    let sampled;
    let source = if state.is_analytic() {
        sampled = state.resampled(budget.grid(ka, kb, PANEL, 8)?)?;
        &sampled
    } else {
        budget.check(state.grid())?;
        state
    };
    let g = source.grid();
    let rows = g
        .nodes()
        .par_iter()
        .zip(g.weights())
        .zip(source.amplitudes())
        .map(|((&k, &w), a)| -> Result<Vec<f64>> {
            let f = f_row(&FKernelParams::new(k * k / m, ell, m)?, taus)?;
            let p = w * a.norm_sqr();
            Ok(f.into_iter().map(|v| p * v).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut density = vec![0.0; taus.len()];
    for row in &rows {
        density.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
    let tg = Grid1D::trapezoid(taus.to_vec())?;
    Ok(DensityCurve {
        times: taus.to_vec(),
        weights: tg.weights().to_vec(),
        density,
        no_detection: (1.0 - state.positive_mass()).max(0.0),
    })
}

/// τ_f(p) = ∫₀^∞ ds s F(p²/m, ℓ, s) with F in its Airy form. With a = Dτ_c the
/// integral is τ_c∫_{−∞}^{a}Ai − Ai'(a)/D; the oscillatory tail is summed in the
/// Abel sense (∫Ai = 1 and ∫y Ai(y)dy = Ai'(y) over the whole line), and only
/// the decaying piece ∫_a^∞ Ai is computed by quadrature.
pub fn tof_mean(p: f64, l1: f64, l2: f64, mass: f64) -> Result<f64> {
    let ell = check_separation(l1, l2)?;
    if !(p > 0.0) || !p.is_finite() {
        return invalid("time-of-flight velocity needs p > 0");
    }
    let params = FKernelParams::new(p * p / mass, ell, mass)?;
    let d = params.airy_scale();
    let tc = params.flight_time();
    let a = d * tc;
    let upper = |len: f64| -> Result<f64> { Ok(composite_gauss_legendre(128, PANEL, a, a + len)?.integrate(airy_ai)) };
    let (tail, check) = (upper(40.0)?, upper(60.0)?);
    if (tail - check).abs() > 1e-12 {
        return guard("τ_f quadrature did not converge");
    }
    Ok(tc * (1.0 - tail) - airy_ai_prime(a) / d)
}

/// v_tof = (L₂−L₁)/τ_f(p).
pub fn tof_velocity(p: f64, l1: f64, l2: f64, mass: f64) -> Result<f64> {
    Ok((l2 - l1) / tof_mean(p, l1, l2, mass)?)
}

/// P_cl(t₁,t₂) = ∫dXdP W δ(t₁ − T_c1) δ(t₂ − t₁ − T_c2 + T_c1). Both deltas are
/// resolved in closed form: P = mℓ/τ, X = L₁ − t₁ℓ/τ and the Jacobian is P³/(m²ℓ).
pub fn classical_sequential(
    w: &WignerFunction,
    mass: f64,
    l1: f64,
    l2: f64,
    times1: &[f64],
    times2: &[f64],
) -> Result<DensitySurface> {
    let ell = check_separation(l1, l2)?;
    check_times(times1)?;
    check_times(times2)?;
    if !(mass > 0.0) {
        return invalid("mass must be positive");
    }
    let (_, _, pa, pb) = w.support_box;
    if pa <= 1e-3 * pb.abs() {
        return invalid("classical sequential density needs Wigner support in P > 0");
    }
    let density = times1
        .iter()
        .map(|&t1| {
            times2
                .iter()
                .map(|&t2| {
                    let tau = t2 - t1;
                    if tau <= 0.0 {
                        return 0.0;
                    }
                    let p = mass * ell / tau;
                    w.eval(l1 - t1 * ell / tau, p) * p.powi(3) / (mass * mass * ell)
                })
                .collect()
        })
        .collect();
    let g1 = Grid1D::trapezoid(times1.to_vec())?;
    let g2 = Grid1D::trapezoid(times2.to_vec())?;
    Ok(DensitySurface {
        times1: times1.to_vec(),
        times2: times2.to_vec(),
        weights1: g1.weights().to_vec(),
        weights2: g2.weights().to_vec(),
        density,
        marginal_no_detect: [0.0; 3],
    })
}
