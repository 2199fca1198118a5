//! Low-rank evaluation of arrival-time operators on a momentum grid.
//!
//! Every kernel handled here has the form ⟨k'|Π(t)|k⟩ = A(k,k')e^{iθ_k − iθ_k'},
//! θ_k = kL − ε_k t, with a Hermitian, time-independent A. After absorbing
//! quadrature weights, B_ij = √wᵢ A(kᵢ,kⱼ) √wⱼ is factorized once as
//! Σ_r s_r h_r h_r† (pivoted LDL†, s_r = ±1), so each time point costs O(rN)
//! instead of O(N²). When the factorization does not converge at low rank the
//! dense matrix is kept instead.

use crate::quadrature::Grid1D;
use crate::{invalid, Complex64, Result};
use rayon::prelude::*;

const LDL_TOL: f64 = 1e-14;
const MAX_FACTOR_RANK: usize = 160;
const CHECK_SAMPLES: usize = 4096;

/// Hermitian N×N matrix, factorized when possible.
#[derive(Debug, Clone)]
pub enum HermitianFactor {
    LowRank { vectors: Vec<Vec<Complex64>>, signs: Vec<f64> },
    Dense { n: usize, data: Vec<Complex64> },
}

impl HermitianFactor {
    /// Factorizes the matrix with entries `entry(i, j)`; `entry` must be Hermitian.
    pub fn build(n: usize, entry: impl Fn(usize, usize) -> Complex64 + Sync) -> Self {
        match pivoted_ldl(n, &entry) {
            Some((vectors, signs)) => Self::LowRank { vectors, signs },
            None => {
                let data: Vec<Complex64> =
                    (0..n * n).into_par_iter().map(|idx| entry(idx / n, idx % n)).collect();
                Self::Dense { n, data }
            }
        }
    }

    /// Rank of the low-rank representation, `None` for the dense fallback.
    pub fn rank(&self) -> Option<usize> {
        match self {
            Self::LowRank { signs, .. } => Some(signs.len()),
            Self::Dense { .. } => None,
        }
    }

    /// b†·M·a.
    pub fn bilinear(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        match self {
            Self::LowRank { vectors, signs } => vectors
                .iter()
                .zip(signs)
                .map(|(h, s)| project(h, a) * project(h, b).conj() * *s)
                .sum(),
            Self::Dense { n, data } => {
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..*n {
                    let row = &data[j * n..(j + 1) * n];
                    let mut r = Complex64::new(0.0, 0.0);
                    for i in 0..*n {
                        r += row[i] * a[i];
                    }
                    s += b[j].conj() * r;
                }
                s
            }
        }
    }

    /// a†·M·a, real for Hermitian M.
    pub fn quadratic(&self, a: &[Complex64]) -> f64 {
        match self {
            Self::LowRank { vectors, signs } => {
                vectors.iter().zip(signs).map(|(h, s)| s * project(h, a).norm_sqr()).sum()
            }
            Self::Dense { .. } => self.bilinear(a, a).re,
        }
    }

    /// Signed outer-product terms (s_r, h_r); dense matrices are factorized by
    /// eigendecomposition first.
    pub fn terms(&self) -> Vec<(f64, Vec<Complex64>)> {
        match self {
            Self::LowRank { vectors, signs } => signs.iter().copied().zip(vectors.iter().cloned()).collect(),
            Self::Dense { n, data } => {
                let m = nalgebra::DMatrix::from_fn(*n, *n, |j, i| data[j * n + i]);
                let eig = nalgebra::SymmetricEigen::new(m);
                let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                eig.eigenvalues
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() > 1e-15 * top)
                    .map(|(c, &v)| {
                        let scale = v.abs().sqrt();
                        (v.signum(), eig.eigenvectors.column(c).iter().map(|z| z * scale).collect())
                    })
                    .collect()
            }
        }
    }
}

/// Σᵢ conj(hᵢ)·aᵢ
fn project(h: &[Complex64], a: &[Complex64]) -> Complex64 {
    h.iter().zip(a).map(|(x, y)| x.conj() * y).sum()
}

fn pivoted_ldl(n: usize, entry: &(impl Fn(usize, usize) -> Complex64 + Sync)) -> Option<(Vec<Vec<Complex64>>, Vec<f64>)> {
    if n == 0 {
        return Some((Vec::new(), Vec::new()));
    }
    let mut d: Vec<f64> = (0..n).map(|i| entry(i, i).re).collect();
    let mut scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        scale = (0..n).flat_map(|i| [entry(i, (i * 7 + 1) % n), entry(i, n - 1 - i)]).map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Some((Vec::new(), Vec::new()));
        }
    }
    let cap = MAX_FACTOR_RANK.min(n / 2 + 1);
    let mut vectors: Vec<Vec<Complex64>> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut used = vec![false; n];
    loop {
        let (p, dp) = d
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, v)| (i, *v))
            .fold((usize::MAX, 0.0f64), |acc, (i, v)| if v.abs() > acc.1.abs() { (i, v) } else { acc });
        if p == usize::MAX || dp.abs() <= LDL_TOL * scale {
            break;
        }
        if vectors.len() == cap {
            return None;
        }
        let mut col: Vec<Complex64> = (0..n).into_par_iter().map(|i| entry(i, p)).collect();
        for (h, s) in vectors.iter().zip(&signs) {
            let hp = h[p].conj() * *s;
            for (c, hi) in col.iter_mut().zip(h) {
                *c -= hi * hp;
            }
        }
        let inv = 1.0 / dp.abs().sqrt();
        let h: Vec<Complex64> = col.iter().map(|c| c * inv).collect();
        let s = dp.signum();
        for (di, hi) in d.iter_mut().zip(&h) {
            *di -= s * hi.norm_sqr();
        }
        used[p] = true;
        d[p] = 0.0;
        vectors.push(h);
        signs.push(s);
    }
    // Diagonal pivoting bounds the residual only for semidefinite matrices; check samples.
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15 ^ n as u64;
    let samples = CHECK_SAMPLES.min(n * n);
    for _ in 0..samples {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let i = ((state >> 33) % n as u64) as usize;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = ((state >> 33) % n as u64) as usize;
        let approx: Complex64 = vectors.iter().zip(&signs).map(|(h, s)| h[i] * h[j].conj() * *s).sum();
        if (entry(i, j) - approx).norm() > 1e-11 * scale {
            return None;
        }
    }
    Some((vectors, signs))
}

/// Π_L(t) for a time-independent kernel amplitude A(k,k') on a momentum grid.
#[derive(Debug, Clone)]
pub struct ArrivalOperator {
    nodes: Vec<f64>,
    sqrt_w: Vec<f64>,
    mass: f64,
    l: f64,
    factor: HermitianFactor,
}

impl ArrivalOperator {
    pub fn new(grid: &Grid1D, mass: f64, l: f64, amplitude: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        if !(mass > 0.0) || !l.is_finite() {
            return invalid("arrival operator needs positive mass and finite L");
        }
        let nodes = grid.nodes().to_vec();
        let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
        let factor = HermitianFactor::build(nodes.len(), |i, j| {
            Complex64::new(sqrt_w[i] * amplitude(nodes[i], nodes[j]) * sqrt_w[j], 0.0)
        });
        Ok(Self { nodes, sqrt_w, mass, l, factor })
    }

    pub fn rank(&self) -> Option<usize> {
        self.factor.rank()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// √wᵢ ψᵢ e^{iθᵢ(t)}
    pub fn dress(&self, amps: &[Complex64], t: f64) -> Vec<Complex64> {
        self.nodes
            .iter()
            .zip(&self.sqrt_w)
            .zip(amps)
            .map(|((&k, &sw), a)| a * Complex64::from_polar(sw, k * self.l - 0.5 * k * k / self.mass * t))
            .collect()
    }

    /// ⟨ψ|Π(t)|ψ⟩
    pub fn expectation(&self, amps: &[Complex64], t: f64) -> f64 {
        self.factor.quadratic(&self.dress(amps, t))
    }

    /// ⟨b|Π(t)|a⟩
    pub fn element(&self, a: &[Complex64], b: &[Complex64], t: f64) -> Complex64 {
        self.factor.bilinear(&self.dress(a, t), &self.dress(b, t))
    }

    /// Matrix of elements ⟨fⱼ|Π(t)|fᵢ⟩ stored as m[j][i].
    pub fn elements(&self, factors: &[&[Complex64]], t: f64) -> Vec<Vec<Complex64>> {
        let dressed: Vec<Vec<Complex64>> = factors.iter().map(|f| self.dress(f, t)).collect();
        match &self.factor {
            HermitianFactor::LowRank { vectors, signs } => {
                let proj: Vec<Vec<Complex64>> =
                    dressed.iter().map(|d| vectors.iter().map(|h| project(h, d)).collect()).collect();
                (0..factors.len())
                    .map(|j| {
                        (0..factors.len())
                            .map(|i| {
                                proj[i].iter().zip(&proj[j]).zip(signs).map(|((a, b), s)| a * b.conj() * *s).sum()
                            })
                            .collect()
                    })
                    .collect()
            }
            HermitianFactor::Dense { .. } => (0..factors.len())
                .map(|j| (0..factors.len()).map(|i| self.factor.bilinear(&dressed[i], &dressed[j])).collect())
                .collect(),
        }
    }
}
