//! Joint arrival statistics of two particles at two detectors.
//!
//! Everything is evaluated on the low-rank form |Ψ⟩ = Σ cᵢⱼ |φᵢ⟩⊗|χⱼ⟩: one-particle
//! matrix elements ⟨φₖ|X|φᵢ⟩ and ⟨χₗ|Y|χⱼ⟩ are contracted with the coefficients,
//! ⟨Ψ|X⊗Y|Ψ⟩ = Σ cᵢⱼ c̄ₖₗ Xₖᵢ Yₗⱼ.

use crate::povm::ArrivalOperator;
use crate::quadrature::{composite_gauss_legendre, Grid1D, OscillationBudget};
use crate::states::{arrival_phase_rate, union_window, MomentumState, TwoParticleState};
use crate::toa_single::{
    check_time_spacing, check_times, generating_element, kernel_amplitude, richardson_derivatives, DensityCurve,
    DetectorConfig, EtaFamily, NEGATIVITY_LIMIT,
};
use crate::{guard, invalid, Complex64, Result};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt;

type Matrix = Vec<Vec<Complex64>>;

/// Single-time densities below this are treated as zero in ratios.
pub const DIVISION_GUARD: f64 = 1e-12;

/// Joint density P⁽²⁾(t₁,t₂) on a product time grid, `density[i][j]` at
/// (times1[i], times2[j]).
#[derive(Debug, Clone)]
pub struct DensitySurface {
    pub times1: Vec<f64>,
    pub times2: Vec<f64>,
    pub weights1: Vec<f64>,
    pub weights2: Vec<f64>,
    pub density: Vec<Vec<f64>>,
    /// Masses of (∅,t₂), (t₁,∅) and (∅,∅): particle 1 never detected, particle
    /// 2 never detected, neither detected.
    pub marginal_no_detect: [f64; 3],
}

impl DensitySurface {
    /// ∬P⁽²⁾ over the grid.
    pub fn detected(&self) -> f64 {
        self.density
            .iter()
            .zip(&self.weights1)
            .map(|(row, w1)| w1 * row.iter().zip(&self.weights2).map(|(p, w2)| p * w2).sum::<f64>())
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.detected() + self.marginal_no_detect.iter().sum::<f64>()
    }

    /// ∫dt₂ P⁽²⁾(t₁,t₂) at every t₁.
    pub fn marginal1(&self) -> Vec<f64> {
        self.density.iter().map(|row| row.iter().zip(&self.weights2).map(|(p, w)| p * w).sum()).collect()
    }

    /// ∫dt₁ P⁽²⁾(t₁,t₂) at every t₂.
    pub fn marginal2(&self) -> Vec<f64> {
        (0..self.times2.len())
            .map(|j| self.density.iter().zip(&self.weights1).map(|(row, w)| row[j] * w).sum())
            .collect()
    }

    /// Bilinear interpolation inside the grid.
    pub fn at(&self, t1: f64, t2: f64) -> Result<f64> {
        let (i, a) = bracket(&self.times1, t1)?;
        let (j, b) = bracket(&self.times2, t2)?;
        let d = &self.density;
        Ok((1.0 - a) * ((1.0 - b) * d[i][j] + b * d[i][j + 1]) + a * ((1.0 - b) * d[i + 1][j] + b * d[i + 1][j + 1]))
    }
}

/// Index i and fraction a with t = (1−a)·xs[i] + a·xs[i+1].
fn bracket(xs: &[f64], t: f64) -> Result<(usize, f64)> {
    let n = xs.len();
    if n < 2 || !(t >= xs[0] && t <= xs[n - 1]) {
        return invalid(format!("time {t} outside the tabulated range"));
    }
    let i = xs.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
    Ok((i, (t - xs[i]) / (xs[i + 1] - xs[i])))
}

fn interpolate(curve: &DensityCurve, t: f64) -> Result<f64> {
    let (i, a) = bracket(&curve.times, t)?;
    Ok((1.0 - a) * curve.density[i] + a * curve.density[i + 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ConsistentWithSeparable,
    WitnessedEntangled,
}

/// Separability test from arrival-time and energy spreads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessReport {
    /// (Δt₊)², from the qtp joint density.
    pub dt_plus: f64,
    /// (Δt₋)²
    pub dt_minus: f64,
    /// ΔH₊
    pub dh_plus: f64,
    /// ΔH₋
    pub dh_minus: f64,
    /// ⟨H₁⁻² + H₂⁻²⟩
    pub h_inv2_sum: f64,
    /// lhs − rhs of the inequalities for (Δt₊)² and (Δt₋)².
    pub lhs_minus_rhs: (f64, f64),
    pub verdict: Verdict,
}

/// Margin below which an inequality counts as violated.
pub const WITNESS_TOL: f64 = 1e-8;

impl fmt::Display for WitnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dt_plus_sq = {:?}", self.dt_plus)?;
        writeln!(f, "dt_minus_sq = {:?}", self.dt_minus)?;
        writeln!(f, "dH_plus = {:?}", self.dh_plus)?;
        writeln!(f, "dH_minus = {:?}", self.dh_minus)?;
        writeln!(f, "h_inv2_sum = {:?}", self.h_inv2_sum)?;
        writeln!(f, "lhs_minus_rhs_plus = {:?}", self.lhs_minus_rhs.0)?;
        writeln!(f, "lhs_minus_rhs_minus = {:?}", self.lhs_minus_rhs.1)?;
        let v = match self.verdict {
            Verdict::ConsistentWithSeparable => "consistent_with_separable",
            Verdict::WitnessedEntangled => "witnessed_entangled",
        };
        writeln!(f, "verdict = {v}")
    }
}

/// The factors of one particle sampled on one momentum grid.
struct Side {
    grid: Grid1D,
    amps: Vec<Vec<Complex64>>,
    mass: f64,
    x_range: (f64, f64),
}

impl Side {
    /// Factors already sharing a grid that resolves the detector phases are
    /// used as they are; analytic factors are otherwise resampled on a fresh
    /// budget grid.
    fn new(factors: &[MomentumState], l: f64, t_range: (f64, f64)) -> Result<Self> {
        let mass = factors[0].mass();
        if factors.iter().any(|f| (f.mass() - mass).abs() > 1e-14 * mass) {
            return invalid("factors of one particle must share a mass");
        }
        let x_range = factors
            .iter()
            .map(|f| f.x_range())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, w| (acc.0.min(w.0), acc.1.max(w.1)));
        let first = factors[0].grid();
        if factors.iter().all(|f| f.grid().nodes() == first.nodes()) {
            let rate = arrival_phase_rate((first.first(), first.last()), x_range, &[l], t_range, mass);
            let fits = OscillationBudget::with_rate(rate)?.check(first);
            if fits.is_ok() || !factors.iter().all(|f| f.is_analytic()) {
                fits?;
                let amps = factors.iter().map(|f| f.amplitudes().to_vec()).collect();
                return Ok(Self { grid: first.clone(), amps, mass, x_range });
            }
        } else if !factors.iter().all(|f| f.is_analytic()) {
            return invalid("sampled factors of one particle must share a momentum grid");
        }
        let (mut a, mut b) = union_window(factors.iter().flat_map(|f| f.modes().iter().map(|(_, m)| m)));
        for f in factors {
            a = a.min(f.grid().first());
            b = b.max(f.grid().last());
        }
        let rate = arrival_phase_rate((a, b), x_range, &[l], t_range, mass);
        let grid = OscillationBudget::with_rate(rate)?.grid(a, b, 16, 4)?;
        let amps = factors
            .iter()
            .map(|f| grid.nodes().iter().map(|&k| f.amplitude_at(k)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, amps, mass, x_range })
    }

    fn refs(&self) -> Vec<&[Complex64]> {
        self.amps.iter().map(|a| a.as_slice()).collect()
    }

    /// m[k][i] = ⟨fₖ|g(k̂)|fᵢ⟩
    fn moment_matrix(&self, g: impl Fn(f64) -> f64) -> Matrix {
        let gw: Vec<f64> = self.grid.nodes().iter().zip(self.grid.weights()).map(|(&k, w)| w * g(k)).collect();
        let n = self.amps.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| gw.iter().zip(&self.amps[k]).zip(&self.amps[i]).map(|((w, fk), fi)| fk.conj() * fi * *w).sum())
                    .collect()
            })
            .collect()
    }

    fn energy_spread(&self, coeffs: &[Vec<Complex64>], other: &Side, first: bool) -> f64 {
        let m = self.mass;
        let e1 = self.moment_matrix(|k| 0.5 * k * k / m);
        let e2 = self.moment_matrix(|k| (0.5 * k * k / m).powi(2));
        let g = other.moment_matrix(|_| 1.0);
        let (h1, h2) = if first {
            (contract(coeffs, &e1, &g).re, contract(coeffs, &e2, &g).re)
        } else {
            (contract(coeffs, &g, &e1).re, contract(coeffs, &g, &e2).re)
        };
        (h2 - h1 * h1).max(0.0).sqrt()
    }
}

/// S[l][j] = Σᵢₖ cᵢⱼ c̄ₖₗ a[k][i]: the particle-1 half of the contraction.
fn reduce1(c: &[Vec<Complex64>], a: &Matrix) -> Matrix {
    let (n1, n2) = (c.len(), c[0].len());
    let mut s = vec![vec![Complex64::new(0.0, 0.0); n2]; n2];
    for i in 0..n1 {
        for k in 0..n1 {
            let x = a[k][i];
            if x == Complex64::new(0.0, 0.0) {
                continue;
            }
            for l in 0..n2 {
                let ck = c[k][l].conj() * x;
                for j in 0..n2 {
                    s[l][j] += c[i][j] * ck;
                }
            }
        }
    }
    s
}

fn finish(s: &Matrix, b: &Matrix) -> Complex64 {
    s.iter().zip(b).map(|(sr, br)| sr.iter().zip(br).map(|(x, y)| x * y).sum::<Complex64>()).sum()
}

/// ⟨Ψ|X⊗Y|Ψ⟩ from particle matrices a[k][i] = ⟨φₖ|X|φᵢ⟩ and b[l][j] = ⟨χₗ|Y|χⱼ⟩.
fn contract(c: &[Vec<Complex64>], a: &Matrix, b: &Matrix) -> Complex64 {
    finish(&reduce1(c, a), b)
}

struct PairEngine<'a> {
    coeffs: &'a [Vec<Complex64>],
    s1: Side,
    s2: Side,
    op1: ArrivalOperator,
    op2: ArrivalOperator,
}

impl<'a> PairEngine<'a> {
    fn new(
        state: &'a TwoParticleState,
        det1: &DetectorConfig,
        det2: &DetectorConfig,
        family: &EtaFamily,
        t1: (f64, f64),
        t2: (f64, f64),
    ) -> Result<Self> {
        det1.validate()?;
        det2.validate()?;
        let s1 = Side::new(state.factors1(), det1.l, t1)?;
        let s2 = Side::new(state.factors2(), det2.l, t2)?;
        let op1 = ArrivalOperator::new(&s1.grid, s1.mass, det1.l, kernel_amplitude(family, det1, s1.mass))?;
        let op2 = ArrivalOperator::new(&s2.grid, s2.mass, det2.l, kernel_amplitude(family, det2, s2.mass))?;
        Ok(Self { coeffs: state.coeffs(), s1, s2, op1, op2 })
    }

    fn block1(&self, t: f64) -> Matrix {
        self.op1.elements(&self.s1.refs(), t)
    }

    fn block2(&self, t: f64) -> Matrix {
        self.op2.elements(&self.s2.refs(), t)
    }

    fn gram1(&self) -> Matrix {
        self.s1.moment_matrix(|_| 1.0)
    }

    fn gram2(&self) -> Matrix {
        self.s2.moment_matrix(|_| 1.0)
    }

    /// (P⁽²⁾(t₁,t₂), P⁽¹⁾₁(t₁), P⁽¹⁾₂(t₂))
    fn point(&self, t1: f64, t2: f64) -> (f64, f64, f64) {
        let (a1, a2) = (self.block1(t1), self.block2(t2));
        let c = self.coeffs;
        (contract(c, &a1, &a2).re, contract(c, &a1, &self.gram2()).re, contract(c, &self.gram1(), &a2).re)
    }
}

/// Detection probabilities (particle 1, particle 2, both) over the whole time
/// axis, from ∫Π dt = α(ε)θ(k).
fn detection_masses(engine: &PairEngine, det1: &DetectorConfig, det2: &DetectorConfig) -> (f64, f64, f64) {
    let (m1, m2) = (engine.s1.mass, engine.s2.mass);
    let q1 = engine.s1.moment_matrix(|k| if k > 0.0 { det1.absorption.rate(0.5 * k * k / m1) } else { 0.0 });
    let q2 = engine.s2.moment_matrix(|k| if k > 0.0 { det2.absorption.rate(0.5 * k * k / m2) } else { 0.0 });
    let c = engine.coeffs;
    (
        contract(c, &q1, &engine.gram2()).re,
        contract(c, &engine.gram1(), &q2).re,
        contract(c, &q1, &q2).re,
    )
}

/// P⁽²⁾(t₁,t₂) = Tr[ρ Π_{L₁}(t₁)⊗Π_{L₂}(t₂)] on the product of two time grids
/// (trapezoid weights). The no-detection masses need both particles to start
/// on the source side of their detectors.
pub fn pair_density(
    state: &TwoParticleState,
    det1: &DetectorConfig,
    det2: &DetectorConfig,
    family: &EtaFamily,
    times1: &[f64],
    times2: &[f64],
) -> Result<DensitySurface> {
    check_times(times1)?;
    check_times(times2)?;
    let range = |t: &[f64]| (t[0], t[t.len() - 1]);
    let engine = PairEngine::new(state, det1, det2, family, range(times1), range(times2))?;
    if engine.s1.x_range.1 > det1.l || engine.s2.x_range.1 > det2.l {
        return invalid("pair density needs both particles to start before their detectors");
    }
    let c = state.coeffs();
    check_time_spacing(times1, engine.s1.energy_spread(c, &engine.s2, true))?;
    check_time_spacing(times2, engine.s2.energy_spread(c, &engine.s1, false))?;
    let blocks2: Vec<Matrix> = times2.par_iter().map(|&t| engine.block2(t)).collect();
    let mut density: Vec<Vec<f64>> = times1
        .par_iter()
        .map(|&t1| {
            let s = reduce1(c, &engine.block1(t1));
            blocks2.iter().map(|b| finish(&s, b).re).collect()
        })
        .collect();
    for v in density.iter_mut().flatten() {
        if !v.is_finite() {
            return guard("non-finite joint density");
        }
        if *v < 0.0 && *v >= NEGATIVITY_LIMIT {
            *v = 0.0;
        }
    }
    let (d1, d2, both) = detection_masses(&engine, det1, det2);
    let trio = [(d2 - both).max(0.0), (d1 - both).max(0.0), (1.0 - d1 - d2 + both).max(0.0)];
    let w1 = Grid1D::trapezoid(times1.to_vec())?;
    let w2 = Grid1D::trapezoid(times2.to_vec())?;
    Ok(DensitySurface {
        times1: times1.to_vec(),
        times2: times2.to_vec(),
        weights1: w1.weights().to_vec(),
        weights2: w2.weights().to_vec(),
        density,
        marginal_no_detect: trio,
    })
}

/// Single-particle density of particle 1 or 2 of a pair, from the reduced state.
pub fn marginal_density(
    state: &TwoParticleState,
    det: &DetectorConfig,
    family: &EtaFamily,
    particle: usize,
    times: &[f64],
) -> Result<DensityCurve> {
    if particle != 1 && particle != 2 {
        return invalid("particle index must be 1 or 2");
    }
    check_times(times)?;
    let range = (times[0], times[times.len() - 1]);
    let engine = PairEngine::new(state, det, det, family, range, range)?;
    let c = state.coeffs();
    let (g1, g2) = (engine.gram1(), engine.gram2());
    let density: Vec<f64> = times
        .par_iter()
        .map(|&t| if particle == 1 { contract(c, &engine.block1(t), &g2).re } else { contract(c, &g1, &engine.block2(t)).re })
        .collect();
    let (d1, d2, _) = detection_masses(&engine, det, det);
    let detected = if particle == 1 { d1 } else { d2 };
    let tg = Grid1D::trapezoid(times.to_vec())?;
    Ok(DensityCurve {
        times: times.to_vec(),
        weights: tg.weights().to_vec(),
        density,
        no_detection: (1.0 - detected).clamp(0.0, 1.0),
    })
}

/// a(L,t) = ∫dk (2πm)^{-1/2} √k e^{ikL − iε_k t} ψ̃(k) over k > 0; Kijowski's
/// operator is |a⟩⟨a|.
pub fn kijowski_amplitude(state: &MomentumState, l: f64, t: f64) -> Result<Complex64> {
    let m = state.mass();
    let g = state.grid();
    let rate = arrival_phase_rate((g.first(), g.last()), state.x_range(), &[l], (t, t), m);
    OscillationBudget::with_rate(rate)?.check(g)?;
    let norm = 1.0 / (2.0 * PI * m).sqrt();
    Ok(g.nodes()
        .iter()
        .zip(g.weights())
        .zip(state.amplitudes())
        .filter(|((&k, _), _)| k > 0.0)
        .map(|((&k, &w), a)| a * Complex64::from_polar(w * norm * k.sqrt(), k * l - 0.5 * k * k / m * t))
        .sum())
}

/// C⁽²⁾(t₁,t₂) = P⁽²⁾(t₁,t₂)/(P⁽¹⁾(t₁)P⁽¹⁾(t₂)), all three interpolated.
pub fn coherence(surface: &DensitySurface, curve1: &DensityCurve, curve2: &DensityCurve, t1: f64, t2: f64) -> Result<f64> {
    let (p1, p2) = (interpolate(curve1, t1)?, interpolate(curve2, t2)?);
    if p1 < DIVISION_GUARD || p2 < DIVISION_GUARD {
        return guard(format!("single-time density below {DIVISION_GUARD:e} at ({t1}, {t2})"));
    }
    Ok(surface.at(t1, t2)? / (p1 * p2))
}

/// c⁽²⁾ = P⁽²⁾/(P⁽¹⁾₁P⁽¹⁾₂), with the 0/0 limit set to 0 when the joint
/// density vanishes faster than the product of the singles.
fn ratio(joint: f64, p1: f64, p2: f64) -> Result<f64> {
    if p1 < DIVISION_GUARD || p2 < DIVISION_GUARD {
        if joint.abs() < DIVISION_GUARD * DIVISION_GUARD {
            return Ok(0.0);
        }
        return guard(format!("single-time density below {DIVISION_GUARD:e}"));
    }
    Ok(joint / (p1 * p2))
}

/// Coincidence function c⁽²⁾(L,t) for both particles at one detector.
pub fn coincidence(state: &TwoParticleState, det: &DetectorConfig, family: &EtaFamily, t: f64) -> Result<f64> {
    coincidence_curve(state, det, family, &[t]).map(|v| v[0])
}

/// c⁽²⁾(L,t) at each of `times`, sharing one operator factorization.
pub fn coincidence_curve(
    state: &TwoParticleState,
    det: &DetectorConfig,
    family: &EtaFamily,
    times: &[f64],
) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let range = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |r, &t| (r.0.min(t), r.1.max(t)));
    let engine = PairEngine::new(state, det, det, family, range, range)?;
    times
        .par_iter()
        .map(|&t| {
            let (joint, p1, p2) = engine.point(t, t);
            ratio(joint, p1, p2)
        })
        .collect()
}

/// 8|a₁a₂|²/(|a₁|²+|a₂|²)², the bosonic coincidence function for Kijowski's
/// operator in terms of the single-packet amplitudes.
pub fn boson_coincidence_from_amplitudes(a1: Complex64, a2: Complex64) -> Result<f64> {
    let s = a1.norm_sqr() + a2.norm_sqr();
    ratio(2.0 * (a1 * a2).norm_sqr(), 0.5 * s, 0.5 * s)
}

/// h(t₁,t₂) = √(c⁽²⁾(t₁)c⁽²⁾(t₂))/C⁽²⁾(t₁,t₂) at one detector.
pub fn cs_ratio(state: &TwoParticleState, det: &DetectorConfig, family: &EtaFamily, t1: f64, t2: f64) -> Result<f64> {
    cs_ratio_curve(state, det, family, t1, &[t2]).and_then(|mut v| v.remove(0))
}

/// h(t₁,t₂) for fixed t₁ along `times2`; points failing a division guard carry
/// their own error.
pub fn cs_ratio_curve(
    state: &TwoParticleState,
    det: &DetectorConfig,
    family: &EtaFamily,
    t1: f64,
    times2: &[f64],
) -> Result<Vec<Result<f64>>> {
    let range = times2.iter().fold((t1, t1), |r, &t| (r.0.min(t), r.1.max(t)));
    let engine = PairEngine::new(state, det, det, family, range, range)?;
    let c = engine.coeffs;
    let (g1, g2) = (engine.gram1(), engine.gram2());
    let (a1, b1) = (engine.block1(t1), engine.block2(t1));
    let c1 = ratio(contract(c, &a1, &b1).re, contract(c, &a1, &g2).re, contract(c, &g1, &b1).re);
    Ok(times2
        .par_iter()
        .map(|&t2| {
            let c1 = c1.clone()?;
            let (a2, b2) = (engine.block1(t2), engine.block2(t2));
            let c2 = ratio(contract(c, &a2, &b2).re, contract(c, &a2, &g2).re, contract(c, &g1, &b2).re)?;
            let (p1, p2) = (contract(c, &a1, &g2).re, contract(c, &g1, &b2).re);
            if p1 < DIVISION_GUARD || p2 < DIVISION_GUARD {
                return guard(format!("single-time density below {DIVISION_GUARD:e}"));
            }
            let big_c = contract(c, &a1, &b2).re / (p1 * p2);
            if big_c.abs() < DIVISION_GUARD {
                return guard(format!("coherence {big_c:e} below {DIVISION_GUARD:e}"));
            }
            Ok((c1 * c2).max(0.0).sqrt() / big_c)
        })
        .collect())
}

/// (⟨ψ|Π̃|ψ⟩, ⟨ψ|Π̃²|ψ⟩) for Kijowski's operator smeared in energy over 1/σ.
/// Π̃² is evaluated as ‖Π̃ψ‖² with (Π̃ψ)(q) on a grid extending 8/σ beyond the
/// state's energies.
pub fn smeared_moments(state: &MomentumState, det: &DetectorConfig, t: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return invalid("smearing width must be positive");
    }
    let m = state.mass();
    let det = DetectorConfig { smear_sigma: sigma, ..det.clone() };
    det.validate()?;
    let amp = kernel_amplitude(&EtaFamily::kijowski(), &det, m);
    let (ka, kb) = state.momentum_range();
    let (ka, kb) = (ka.max(0.0), kb);
    if kb <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let rate = arrival_phase_rate((ka, kb), state.x_range(), &[det.l], (t, t), m) + 3.0 * sigma * kb / m;
    let budget = OscillationBudget::with_rate(rate)?;
    let state = if state.is_analytic() && budget.check(state.grid()).is_err() {
        state.resampled(budget.grid(ka, kb, 16, 4)?)?
    } else {
        budget.check(state.grid())?;
        state.clone()
    };
    let g = state.grid();
    let dressed: Vec<(f64, Complex64)> = g
        .nodes()
        .iter()
        .zip(g.weights())
        .zip(state.amplitudes())
        .filter(|((&k, _), _)| k > 0.0)
        .map(|((&k, &w), a)| (k, a * Complex64::from_polar(w, k * det.l - 0.5 * k * k / m * t)))
        .collect();
    // The smeared kernel has high numerical rank, so both moments are summed
    // directly rather than through a factorization.
    let apply = |q: f64| dressed.iter().map(|&(k, d)| d * amp(k, q)).sum::<Complex64>();
    let first: f64 = dressed.par_iter().map(|&(q, d)| (d.conj() * apply(q)).re).collect::<Vec<_>>().iter().sum();
    let (ea, eb) = (0.5 * ka * ka / m, 0.5 * kb * kb / m);
    let (qa, qb) = ((2.0 * m * (ea - 8.0 / sigma).max(0.0)).sqrt(), (2.0 * m * (eb + 8.0 / sigma)).sqrt());
    let q_budget = OscillationBudget::with_rate(3.0 * sigma * qb / m + 1.0)?;
    if q_budget.required_density() * (qb - qa) > 4.0e5 {
        return invalid("smearing too narrow: Π̃² grid would exceed 400000 nodes");
    }
    let qg = composite_gauss_legendre(q_budget.panels_for(qb - qa, 16).max(4), 16, qa, qb)?;
    let second: f64 =
        qg.nodes().par_iter().zip(qg.weights()).map(|(&q, &wq)| wq * apply(q).norm_sqr()).collect::<Vec<_>>().iter().sum();
    Ok((first, second))
}

/// c⁽²⁾_J = ½c⁽²⁾_Π + (⟨ψ₁|Π̃²|ψ₁⟩ + ⟨ψ₂|Π̃²|ψ₂⟩)/(⟨ψ₁|Π̃|ψ₁⟩² + ⟨ψ₂|Π̃|ψ₂⟩²),
/// the coincidence function a current-operator model predicts for a product
/// or (anti)symmetrized pair; c⁽²⁾_Π uses Kijowski's operator.
pub fn current_model_coincidence(state: &TwoParticleState, det: &DetectorConfig, t: f64, smear: f64) -> Result<f64> {
    if !(smear > 0.0) {
        return invalid("current model needs a positive smearing width");
    }
    let (psi1, psi2) = state.pair_factors().ok_or_else(|| {
        crate::ToaError::InvalidArgument("current model needs a product or (anti)symmetrized pair".into())
    })?;
    let sharp = DetectorConfig { smear_sigma: 0.0, ..det.clone() };
    let c_pi = coincidence(state, &sharp, &EtaFamily::kijowski(), t)?;
    let (a1, b1) = smeared_moments(psi1, det, t, smear)?;
    let (a2, b2) = smeared_moments(psi2, det, t, smear)?;
    let denom = a1 * a1 + a2 * a2;
    if denom < DIVISION_GUARD * DIVISION_GUARD {
        return guard("smeared single-time densities vanish");
    }
    Ok(0.5 * c_pi + (b1 + b2) / denom)
}

fn generating_matrix(factors: &[MomentumState], det: &DetectorConfig, family: &EtaFamily, mu: f64) -> Result<Matrix> {
    if !factors.iter().all(|f| f.is_analytic()) {
        return invalid("pair generating function needs analytic factors");
    }
    (0..factors.len())
        .map(|k| (0..factors.len()).map(|i| generating_element(&factors[i], &factors[k], det, family, mu)).collect())
        .collect()
}

/// Z₂[μ₁,μ₂] = ∬dt₁dt₂ e^{−iμ₁t₁−iμ₂t₂} P⁽²⁾(t₁,t₂) over the whole time axes.
pub fn pair_generating_function(
    state: &TwoParticleState,
    det1: &DetectorConfig,
    det2: &DetectorConfig,
    family: &EtaFamily,
    mu1: f64,
    mu2: f64,
) -> Result<Complex64> {
    let z1 = generating_matrix(state.factors1(), det1, family, mu1)?;
    let z2 = generating_matrix(state.factors2(), det2, family, mu2)?;
    Ok(contract(state.coeffs(), &z1, &z2))
}

/// Finite-difference step in μ for the witness moments, in units of the
/// inverse arrival-time spread: μ·Δt = 0.01 balances the O(h⁴) Richardson
/// error against round-off in Z₂.
pub const WITNESS_STEP: f64 = 1e-2;

/// Tests (Δt±)² ≥ 1/(ΔH∓)² − ⟨H₁⁻² + H₂⁻²⟩/16, which holds for every separable
/// state. (Δt±)² comes from the qtp joint density at detectors L₁, L₂ through
/// derivatives of Z₂[μ, ±μ].
pub fn witness_check(state: &TwoParticleState, l1: f64, l2: f64) -> Result<WitnessReport> {
    for f in state.factors1().iter().chain(state.factors2()) {
        if f.grid().first() <= 0.0 || f.mean_momentum() <= 0.0 || f.grid().first() < 1e-3 * f.mean_momentum() {
            return invalid("witness needs strictly positive momentum support for both particles");
        }
    }
    let (det1, det2) = (DetectorConfig::ideal(l1), DetectorConfig::ideal(l2));
    let qtp = EtaFamily::qtp();
    let s1 = Side::new(state.factors1(), l1, (0.0, 0.0))?;
    let s2 = Side::new(state.factors2(), l2, (0.0, 0.0))?;
    let c = state.coeffs();
    let (g1, g2) = (s1.moment_matrix(|_| 1.0), s2.moment_matrix(|_| 1.0));
    let one = |side: &Side, g: &dyn Fn(f64) -> f64, first: bool| -> f64 {
        let mm = side.moment_matrix(g);
        if first { contract(c, &mm, &g2).re } else { contract(c, &g1, &mm).re }
    };
    let (m1, m2) = (s1.mass, s2.mass);
    let scale_and_ref = |side: &Side, l: f64, first: bool| -> (f64, f64) {
        let m = side.mass;
        let inv = one(side, &|k| 1.0 / k, first);
        let kbar = one(side, &|k| k, first);
        let dk = (one(side, &|k| k * k, first) - kbar * kbar).max(0.0).sqrt();
        let xbar = 0.5 * (side.x_range.0 + side.x_range.1);
        let dx = (side.x_range.1 - side.x_range.0) / 16.0;
        (m * (l - xbar) * inv, m * dx / kbar + m * (l - xbar).abs() * dk / (kbar * kbar))
    };
    let (ref1, sc1) = scale_and_ref(&s1, l1, true);
    let (ref2, sc2) = scale_and_ref(&s2, l2, false);
    let h = WITNESS_STEP / sc1.max(sc2).max(1e-12);
    let spread = |sign: f64| -> Result<f64> {
        let (d1, d2) = richardson_derivatives(
            |mu| {
                Ok(pair_generating_function(state, &det1, &det2, &qtp, mu, sign * mu)?
                    * Complex64::from_polar(1.0, mu * (ref1 + sign * ref2)))
            },
            h,
        )?;
        let mean = (Complex64::i() * d1).re;
        Ok(-d2.re - mean * mean)
    };
    let dt_plus = spread(1.0)?;
    let dt_minus = spread(-1.0)?;
    let e1 = s1.moment_matrix(|k| 0.5 * k * k / m1);
    let e2 = s2.moment_matrix(|k| 0.5 * k * k / m2);
    let h1 = contract(c, &e1, &g2).re;
    let h2 = contract(c, &g1, &e2).re;
    let var1 = one(&s1, &|k| (0.5 * k * k / m1).powi(2), true) - h1 * h1;
    let var2 = one(&s2, &|k| (0.5 * k * k / m2).powi(2), false) - h2 * h2;
    let cov = contract(c, &e1, &e2).re - h1 * h2;
    let dh_plus = (var1 + var2 + 2.0 * cov).max(0.0).sqrt();
    let dh_minus = (var1 + var2 - 2.0 * cov).max(0.0).sqrt();
    let h_inv2_sum =
        one(&s1, &|k| (2.0 * m1 / (k * k)).powi(2), true) + one(&s2, &|k| (2.0 * m2 / (k * k)).powi(2), false);
    if dh_plus <= 0.0 || dh_minus <= 0.0 {
        return guard("energy spread vanishes");
    }
    let lhs_minus_rhs = (
        dt_plus - (1.0 / (dh_minus * dh_minus) - h_inv2_sum / 16.0),
        dt_minus - (1.0 / (dh_plus * dh_plus) - h_inv2_sum / 16.0),
    );
    let verdict = if lhs_minus_rhs.0 < -WITNESS_TOL || lhs_minus_rhs.1 < -WITNESS_TOL {
        Verdict::WitnessedEntangled
    } else {
        Verdict::ConsistentWithSeparable
    };
    Ok(WitnessReport { dt_plus, dt_minus, dh_plus, dh_minus, h_inv2_sum, lhs_minus_rhs, verdict })
}

/// Classical joint density P(t₁,t₂) = Σ_ξ ρ(ξ) F₁(t₁,ξ) F₂(t₂,ξ) from
/// nonnegative response tables `f1[ξ][i]`, `f2[ξ][j]`.
pub fn classical_pair_density(rho: &[f64], f1: &[Vec<f64>], f2: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rho.len() != f1.len() || rho.len() != f2.len() || rho.is_empty() {
        return invalid("one response row per phase-space point is required");
    }
    if rho.iter().chain(f1.iter().flatten()).chain(f2.iter().flatten()).any(|v| !(*v >= 0.0)) {
        return invalid("classical weights and responses must be nonnegative");
    }
    let (n1, n2) = (f1[0].len(), f2[0].len());
    Ok((0..n1)
        .map(|i| (0..n2).map(|j| rho.iter().zip(f1).zip(f2).map(|((r, a), b)| r * a[i] * b[j]).sum()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{pair_state, GaussianPacket, Statistics};

    fn packet(x0: f64, p0: f64, l: f64, t: (f64, f64)) -> MomentumState {
        MomentumState::packet_for_detection(&GaussianPacket::standard(x0, p0), l, t).unwrap()
    }

    #[test]
    fn contraction_of_grams_is_the_norm() {
        let s1 = packet(-5.0, 10.0, 0.0, (0.0, 1.0));
        let s2 = packet(-30.0, 12.0, 0.0, (0.0, 1.0));
        let st = pair_state(&s1, &s2, Statistics::Fermion).unwrap();
        let a = Side::new(st.factors1(), 0.0, (0.0, 1.0)).unwrap();
        let g = a.moment_matrix(|_| 1.0);
        assert!((contract(st.coeffs(), &g, &g).re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bracket_and_interpolation() {
        let xs = [0.0, 1.0, 3.0];
        assert_eq!(bracket(&xs, 3.0).unwrap(), (1, 1.0));
        assert_eq!(bracket(&xs, 2.0).unwrap(), (1, 0.5));
        assert!(bracket(&xs, 3.5).is_err());
    }

    #[test]
    fn ratio_zero_over_zero() {
        assert_eq!(ratio(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(ratio(1e-3, 1e-14, 1.0).is_err());
        assert!((ratio(2.0, 1.0, 4.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classical_surface_rejects_negative_responses() {
        assert!(classical_pair_density(&[1.0], &[vec![-1.0]], &[vec![1.0]]).is_err());
        let p = classical_pair_density(&[0.5, 0.5], &[vec![1.0], vec![3.0]], &[vec![2.0], vec![0.0]]).unwrap();
        assert!((p[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn witness_report_text() {
        let r = WitnessReport {
            dt_plus: 1.0,
            dt_minus: 2.0,
            dh_plus: 0.5,
            dh_minus: 0.25,
            h_inv2_sum: 0.0,
            lhs_minus_rhs: (0.1, -0.2),
            verdict: Verdict::WitnessedEntangled,
        };
        let s = r.to_string();
        assert!(s.contains("verdict = witnessed_entangled"));
        assert!(s.lines().all(|l| l.contains(" = ")));
    }
}
