use std::f64::consts::{FRAC_PI_2, PI};
use toa::quadrature::{airy_ai, composite_gauss_legendre};
use toa::states::{packet_wigner, GaussianPacket, MomentumState};
use toa::toa_sequential::*;
use toa::toa_single::*;
use toa::Complex64;

fn uniform(n: usize, a: f64, b: f64) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

fn params(e: f64, ell: f64) -> FKernelParams {
    FKernelParams::new(e, ell, 1.0).unwrap()
}

/// F from the double-integral definition with the energy delta resolved on
/// k = R cos φ, k' = R sin φ, evaluated by fine composite Simpson. This is the
/// printed normalization, which carries an extra factor 2.
fn f_printed(e: f64, ell: f64, tau: f64) -> f64 {
    let r = (2.0 * e).sqrt();
    let n = 200_000;
    let h = FRAC_PI_2 / n as f64;
    let f = |phi: f64| (r * (phi.cos() - phi.sin()) * ell - e * (2.0 * phi).cos() * tau).cos();
    let mut s = f(0.0) + f(FRAC_PI_2);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    2.0 * e / PI * s * h / 3.0
}

#[test]
fn direct_quadrature_matches_the_double_integral_up_to_a_factor_two() {
    for &(e, ell, tau) in &[(20.0, 1.0, 0.3), (100.0, 10.0, 1.05), (100.0, 10.0, 0.5), (50.0, 3.0, -0.4)] {
        let want = 0.5 * f_printed(e, ell, tau);
        let got = f_direct(&params(e, ell), tau).unwrap();
        assert!((got - want).abs() < 1e-8 * e, "E={e} ℓ={ell} τ={tau}: {got} vs {want}");
    }
}

#[test]
fn stationary_phase_agrees_with_direct_far_from_the_caustic() {
    // The k → 0 endpoints add a non-decaying term of relative size
    // ~ (√(mE)ℓ)^{-1/2}, so the comparison needs √(mE)ℓ ≳ 10³.
    let p = params(1e4, 100.0);
    for i in 0..=35 {
        let gamma = 0.2 + 0.02 * i as f64;
        let tau = p.flight_time() / gamma;
        let (_, b) = stationary_coefficients(gamma).unwrap();
        let envelope = (2.0 * p.energy / (PI * b * tau)).sqrt();
        let d = f_direct(&p, tau).unwrap();
        let s = f_stationary_phase(&p, tau).unwrap();
        assert!((d - s).abs() < 0.05 * envelope, "γ = {gamma}: direct {d}, stationary {s}");
    }
}

#[test]
fn airy_form_agrees_with_direct_near_the_peak() {
    let p = params(100.0, 10.0);
    let d = p.airy_scale();
    let peak = 0.5357 * d;
    for i in 0..=40 {
        let gamma = 0.95 + 0.0025 * i as f64;
        let tau = p.flight_time() / gamma;
        let (a, b) = (f_airy(&p, tau).unwrap(), f_direct(&p, tau).unwrap());
        assert!((a - b).abs() < 0.03 * peak, "γ = {gamma}: airy {a}, direct {b}");
    }
    assert!((f_airy(&p, p.flight_time()).unwrap() - d * airy_ai(0.0)).abs() < 1e-15 * d);
    let twice = params(100.0, 20.0);
    assert!((twice.airy_scale() / d - 2f64.powf(-1.0 / 3.0)).abs() < 1e-14);
}

#[test]
fn direct_peak_sits_at_the_classical_flight_time() {
    let p = params(400.0, 10.0);
    let tc = p.flight_time();
    let taus = uniform(2001, 0.8 * tc, 1.2 * tc);
    let (mut best, mut top) = (0.0, f64::MIN);
    for &t in &taus {
        let v = f_direct(&p, t).unwrap();
        if v > top {
            best = t;
            top = v;
        }
    }
    // The Airy maximum lies at Dτ − Dτ_c = 1.0188.
    let want = tc + 1.0188 / p.airy_scale();
    assert!((best - want).abs() < 0.1 / p.airy_scale(), "peak at {best}, expected {want}");
}

#[test]
fn no_classical_flight_means_negligible_f() {
    let p = params(1e4, 100.0);
    let peak = 0.5357 * p.airy_scale();
    for gamma in [2.0, 3.0, 5.0, 10.0] {
        let v = f_direct(&p, p.flight_time() / gamma).unwrap();
        assert!(v.abs() < 1.5e-3 * peak, "γ = {gamma}: {v}");
    }
    assert_eq!(f_stationary_phase(&p, 0.5 * p.flight_time()).unwrap(), 0.0);
}

#[test]
fn fourier_transform_of_direct_matches_closed_form() {
    let p = params(100.0, 1.0);
    let tc = p.flight_time();
    let half = 200.0 * tc;
    // h below π/E makes the trapezoid rule exact for the band-limited F; the
    // smooth window removes the truncation ringing.
    let n = 2001;
    let taus = uniform(n, -half, half);
    let h = taus[1] - taus[0];
    let window = |t: f64| {
        let u = t / half;
        (1.0 - u * u).powi(4)
    };
    let samples: Vec<f64> = taus.iter().map(|&t| f_direct(&p, t).unwrap() * window(t)).collect();
    for i in 0..=40 {
        let mu = -0.8 * p.energy + 0.04 * p.energy * i as f64;
        let num: Complex64 = taus.iter().zip(&samples).map(|(&t, &f)| Complex64::from_polar(h * f, -mu * t)).sum();
        let want = f_tilde(&p, mu).unwrap();
        assert!((num - want).norm() < 1e-3 * want.norm(), "μ = {mu}: {num} vs {want}");
    }
    assert_eq!(f_tilde(&p, 1.5 * p.energy).unwrap(), Complex64::new(0.0, 0.0));
    assert!(f_tilde(&p, p.energy).is_err());
}

#[test]
fn f_tilde_small_mu_is_the_flight_time_phase() {
    let p = params(400.0, 3.0);
    assert!((f_tilde(&p, 0.0).unwrap() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    let mu = 1e-3 * p.energy;
    let z = f_tilde(&p, mu).unwrap();
    assert!((z.arg() + p.flight_time() * mu).abs() < 1e-6 * p.flight_time() * mu);
}

#[test]
fn stationary_phase_refuses_the_caustic_band() {
    let p = params(1e4, 100.0);
    assert!(f_stationary_phase(&p, p.flight_time() / 0.9995).is_err());
    assert!(f_stationary_phase(&p, -1.0).is_err());
    assert!(FKernelParams::new(-1.0, 1.0, 1.0).is_err());
}

const L1: f64 = 10.0;

fn packet10() -> GaussianPacket {
    GaussianPacket::standard(0.0, 10.0)
}

fn state_for(l: f64, t: (f64, f64)) -> MomentumState {
    MomentumState::packet_for_detection(&packet10(), l, t).unwrap()
}

#[test]
fn sequential_marginals_and_causality() {
    let st = state_for(L1, (0.2, 1.8));
    let t1 = uniform(9, 0.4, 1.6);
    let p1 = arrival_density(&st, &DetectorConfig::ideal(L1), &EtaFamily::qtp(), &t1).unwrap();
    let scale = p1.peak().1;
    let mut marginals = Vec::new();
    for (l2, t2) in [(20.0, uniform(89, 1.0, 3.2)), (25.0, uniform(121, 1.2, 4.2))] {
        let surf = sequential_density(&st, L1, l2, &t1, &t2).unwrap();
        let m1: Vec<f64> = surf.density.iter().map(|row| trapezoid(&t2, row)).collect();
        for (a, b) in m1.iter().zip(&p1.density) {
            assert!((a - b).abs() < 1e-6 * scale, "L2 = {l2}: {a} vs {b}");
        }
        // Mass with t₂ < t₁ on the common part of the grids.
        let mut back = 0.0;
        for (i, row) in surf.density.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if t2[j] < t1[i] {
                    back += surf.weights1[i] * surf.weights2[j] * v.abs();
                }
            }
        }
        assert!(back < 1e-4, "L2 = {l2}: mass at t2 < t1 is {back}");
        marginals.push(m1);
    }
    for (a, b) in marginals[0].iter().zip(&marginals[1]) {
        assert!((a - b).abs() < 1e-6 * scale);
    }
}

#[test]
fn second_marginal_uses_the_modified_eta() {
    // At fixed t₂ the surface oscillates in t₁ at frequencies up to the largest
    // shell energy, so the t₁ grid has to resolve π/E_max.
    let st = state_for(L1, (0.2, 1.8));
    let l2 = 20.0;
    let t1 = uniform(101, 0.4, 1.9);
    let t2 = uniform(23, 1.0, 3.2);
    let surf = sequential_density(&st, L1, l2, &t1, &t2).unwrap();
    let st2 = state_for(l2, (t2[0], t2[t2.len() - 1]));
    let p2 = arrival_density(&st2, &DetectorConfig::ideal(l2), &EtaFamily::sequential_marginal(), &t2).unwrap();
    let top = p2.peak().1;
    for (j, want) in p2.density.iter().enumerate() {
        let col: Vec<f64> = surf.density.iter().map(|r| r[j]).collect();
        let got = trapezoid(&t1, &col);
        assert!((got - want).abs() < 1e-6 * top, "t2 = {}: {got} vs {want}", t2[j]);
    }
}

#[test]
fn sequential_density_rejects_bad_input() {
    let st = state_for(L1, (0.2, 1.8));
    let t1 = uniform(9, 0.4, 1.6);
    assert!(sequential_density(&st, L1, 5.0, &t1, &uniform(89, 1.0, 3.2)).is_err());
    // Second grid ends before the last first detection plus the flight time.
    assert!(sequential_density(&st, L1, 20.0, &t1, &uniform(41, 1.0, 2.0)).is_err());
    let sampled = MomentumState::from_samples(st.grid().clone(), st.amplitudes().to_vec(), 1.0, st.x_range()).unwrap();
    assert!(sequential_density(&sampled, L1, 20.0, &t1, &uniform(89, 1.0, 3.2)).is_err());
}

#[test]
fn surface_ridge_follows_the_classical_flight_time() {
    let pk = GaussianPacket::new(0.0, 20.0, 4.0, 1.0).unwrap();
    let st = MomentumState::packet_for_detection(&pk, L1, (0.2, 0.8)).unwrap();
    let ell = 10.0;
    let t1 = uniform(5, 0.3, 0.7);
    let t2 = uniform(46, 0.6, 1.5);
    let surf = sequential_density(&st, L1, L1 + ell, &t1, &t2).unwrap();
    let tof = ell / pk.p0;
    for (i, row) in surf.density.iter().enumerate() {
        let j = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!((t2[j] - t1[i] - tof).abs() <= t2[1] - t2[0], "t1 = {}: ridge at {}", t1[i], t2[j]);
    }
}

#[test]
fn reduced_state_reproduces_the_conditional_density() {
    let st = state_for(L1, (0.2, 1.8));
    let ell = 10.0;
    let t1 = 1.1;
    let taus = uniform(41, 0.7, 1.5);
    let t2: Vec<f64> = taus.iter().map(|s| s + t1).collect();
    let surf = sequential_density(&st, L1, L1 + ell, &[t1, t1 + 0.05], &t2).unwrap();
    let p1 = arrival_density(&st, &DetectorConfig::ideal(L1), &EtaFamily::qtp(), &[t1 - 0.01, t1, t1 + 0.01]).unwrap();
    let red = reduced_state(&st, L1, t1).unwrap();
    assert!(red.hermiticity_defect() < 1e-10);
    assert!((red.trace() - p1.density[1]).abs() < 1e-8 * p1.density[1], "trace {} vs {}", red.trace(), p1.density[1]);
    let cond = mixed_arrival_density(&red.to_mixed().unwrap(), &DetectorConfig::ideal(ell), &EtaFamily::qtp(), &taus).unwrap();
    let top = cond.peak().1;
    for (k, (a, b)) in cond.density.iter().zip(&surf.density[0]).enumerate() {
        let want = b / red.trace();
        assert!((a - want).abs() < 1e-4 * top, "τ = {}: {a} vs {want}", taus[k]);
    }
}

#[test]
fn reduction_is_not_a_sandwich() {
    let st = MomentumState::from_packet(&packet10(), 24).unwrap();
    let red = reduced_state(&st, L1, 1.0).unwrap();
    let sandwich = sandwich_state(&st, L1, 1.0).unwrap();
    let (a, b) = (red.mean_energy(), sandwich.mean_energy());
    assert!((a - b).abs() > 0.1 * a, "reduced {a}, sandwich {b}");
    assert!(sandwich.hermiticity_defect() < 1e-10);
}

#[test]
fn time_of_flight_is_normalized_and_peaks_at_the_flight_time() {
    let st = MomentumState::from_packet(&packet10(), 16).unwrap();
    let ell = 10.0;
    // The window must reach well below the flight time: the k → 0 edge of the
    // energy shell leaves a weak structure near τ = mℓ/(√2 p₀).
    let taus = uniform(801, 0.0, 4.0);
    let c = time_of_flight_density(&st, L1, L1 + ell, &taus).unwrap();
    assert!((c.detected() - 1.0).abs() < 1e-6, "mass {}", c.detected());
    let (at, _) = c.peak();
    assert!((at - ell / 10.0).abs() < 0.03, "peak at {at}");
}

/// Cov(t₁, t₂ − t₁) over a surface, with weights from the trapezoid rule.
fn covariance(t1: &[f64], t2: &[f64], w1: &[f64], w2: &[f64], p: &[Vec<f64>]) -> f64 {
    let (mut m0, mut ma, mut mb, mut mab) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..t1.len() {
        for j in 0..t2.len() {
            let w = w1[i] * w2[j] * p[i][j];
            let tau = t2[j] - t1[i];
            m0 += w;
            ma += w * t1[i];
            mb += w * tau;
            mab += w * t1[i] * tau;
        }
    }
    mab / m0 - ma * mb / (m0 * m0)
}

/// m²ℓ(L₁ − x₀)Var(1/k) for the packet's Gaussian momentum density.
fn covariance_formula(pk: &GaussianPacket, ell: f64) -> f64 {
    let s = pk.momentum_spread();
    let g = composite_gauss_legendre(40, 16, pk.p0 - 9.0 * s, pk.p0 + 9.0 * s).unwrap();
    let rho = |k: f64| (-(k - pk.p0).powi(2) / (2.0 * s * s)).exp() / ((2.0 * PI).sqrt() * s);
    let m1 = g.integrate(|k| rho(k) / k);
    let m2 = g.integrate(|k| rho(k) / (k * k));
    pk.mass * pk.mass * ell * (L1 - pk.x0) * (m2 - m1 * m1)
}

#[test]
fn first_time_and_flight_time_correlation() {
    let ell = 10.0;
    // Classical surfaces: zero for a packet centred on the first detector,
    // m²ℓ(L₁ − x₀)Var(1/k) otherwise.
    let t1 = uniform(241, -0.6, 1.8);
    let t2 = uniform(481, 0.0, 4.8);
    let (w1, w2) = (trapezoid_weights(&t1), trapezoid_weights(&t2));
    for x0 in [L1, 0.0] {
        let pk = GaussianPacket::new(x0, 10.0, 1.0, 1.0).unwrap();
        let cl = classical_sequential(&packet_wigner(&pk), 1.0, L1, L1 + ell, &t1, &t2).unwrap();
        let c = covariance(&t1, &t2, &w1, &w2, &cl.density);
        let want = covariance_formula(&pk, ell);
        assert!((c - want).abs() < 1e-6 + 1e-3 * want.abs(), "x0 = {x0}: {c} vs {want}");
    }
    // Quantum surface for x₀ ≠ L₁.
    let st = state_for(L1, (0.2, 1.8));
    let (t1, t2) = (uniform(9, 0.4, 1.6), uniform(89, 1.0, 3.2));
    let surf = sequential_density(&st, L1, L1 + ell, &t1, &t2).unwrap();
    let c = covariance(&t1, &t2, &surf.weights1, &surf.weights2, &surf.density);
    let want = covariance_formula(&packet10(), ell);
    assert!((c / want - 1.0).abs() < 0.05, "quantum {c} vs {want}");
}

fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    toa::quadrature::Grid1D::trapezoid(t.to_vec()).unwrap().weights().to_vec()
}

#[test]
fn classical_surface_marginals() {
    let pk = GaussianPacket::new(0.0, 10.0, 1.0, 1.0).unwrap();
    let w = packet_wigner(&pk);
    let ell = 10.0;
    let t1 = uniform(181, 0.3, 2.1);
    let t2 = uniform(441, 1.0, 4.0);
    let cl = classical_sequential(&w, 1.0, L1, L1 + ell, &t1, &t2).unwrap();
    let c1 = classical_arrival_density(&w, L1, 1.0, &t1).unwrap();
    let c2 = classical_arrival_density(&w, L1 + ell, 1.0, &t2).unwrap();
    let m1: Vec<f64> = cl.density.iter().map(|r| trapezoid(&t2, r)).collect();
    for (a, b) in m1.iter().zip(&c1.density) {
        assert!((a - b).abs() < 1e-6 * c1.peak().1);
    }
    for j in (0..t2.len()).step_by(11) {
        let col: Vec<f64> = cl.density.iter().map(|r| r[j]).collect();
        assert!((trapezoid(&t1, &col) - c2.density[j]).abs() < 1e-6 * c2.peak().1);
    }
    let low = GaussianPacket::new(0.0, 1.0, 1.0, 1.0).unwrap();
    assert!(classical_sequential(&packet_wigner(&low), 1.0, L1, L1 + ell, &t1, &t2).is_err());
}

#[test]
fn quantum_surface_approaches_the_classical_one_as_the_flight_path_grows() {
    // Relative to the classical width mℓσ_k/p₀², the F broadening 1/D shrinks
    // as ℓ^{-2/3}; the momentum spread alone does not control the gap.
    let st = state_for(L1, (0.2, 1.8));
    let w = packet_wigner(&packet10());
    let t1 = uniform(9, 0.4, 1.6);
    let mut gaps = Vec::new();
    for (ell, q) in [(10.0f64, 5.0), (40.0, 2.0), (160.0, 1.0)] {
        let tc = ell / 10.0;
        // τ spread is about 0.05 τ_c for σ_k/p₀ = 0.05. A t₂ step dividing the
        // t₁ step lets all rows share their lags.
        let h = 0.15 / q;
        let n = ((1.2 + 0.5 * tc) / h).ceil() as usize + 1;
        let t2: Vec<f64> = (0..n).map(|j| 0.4 + 0.75 * tc + h * j as f64).collect();
        let q = sequential_density(&st, L1, L1 + ell, &t1, &t2).unwrap();
        let c = classical_sequential(&w, 1.0, L1, L1 + ell, &t1, &t2).unwrap();
        let top = c.density.iter().flatten().fold(0.0f64, |a, &v| a.max(v));
        let gap = q.density.iter().flatten().zip(c.density.iter().flatten()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        gaps.push(gap / top);
    }
    assert!(gaps[1] < 0.7 * gaps[0] && gaps[2] < 0.7 * gaps[1], "relative gaps {gaps:?}");
}

/// τ_f from the Abel-damped integral ∫₀^∞ s F_airy(s) e^{−εs} ds with two
/// Richardson steps in ε.
fn abel_tof(p: f64, ell: f64) -> f64 {
    let fp = params(p * p, ell);
    let (d, tc) = (fp.airy_scale(), fp.flight_time());
    let damped = |eps: f64| {
        let end = tc + 40.0 / eps;
        let rate = d * (d * end).sqrt();
        let panels = (rate * end * 8.0 / (2.0 * PI) / 16.0).ceil() as usize + 8;
        composite_gauss_legendre(panels, 16, 0.0, end)
            .unwrap()
            .integrate(|s| s * f_airy(&fp, s).unwrap() * (-eps * s).exp())
    };
    let e0 = 0.1 / tc;
    let (a, b, c) = (damped(e0), damped(0.5 * e0), damped(0.25 * e0));
    let (r1, r2) = (2.0 * b - a, 2.0 * c - b);
    (4.0 * r2 - r1) / 3.0
}

#[test]
fn time_of_flight_velocity() {
    for &(p, ell) in &[(10.0, 10.0), (20.0, 50.0), (100.0, 1.0)] {
        let v = tof_velocity(p, 0.0, ell, 1.0).unwrap();
        assert!((v / p - 1.0).abs() < 1e-3, "p = {p}, ℓ = {ell}: v = {v}");
    }
    let v = tof_velocity(0.1, 0.0, 1.0, 1.0).unwrap();
    assert!((v / 0.1 - 1.0).abs() > 0.01, "pℓ = 0.1 gives v/p = {}", v / 0.1);
    for &(p, ell) in &[(1.0, 1.0), (0.5, 1.0), (2.0, 0.8)] {
        let want = abel_tof(p, ell);
        let got = tof_mean(p, 0.0, ell, 1.0).unwrap();
        assert!((got / want - 1.0).abs() < 2e-4, "p = {p}, ℓ = {ell}: {got} vs {want}");
    }
    let base = tof_mean(0.7, 0.0, 1.3, 1.0).unwrap();
    for lambda in [0.5, 2.0, 3.0] {
        let scaled = tof_mean(0.7 * lambda, 0.0, 1.3 / lambda, 1.0).unwrap();
        assert!((scaled * lambda * lambda / base - 1.0).abs() < 1e-10, "λ = {lambda}");
    }
}

#[test]
fn second_marginal_eta_is_admissible() {
    let eta = EtaFamily::sequential_marginal();
    assert_eq!(eta_eval(&eta, 0.0).unwrap(), 1.0);
    let h = 1e-6;
    assert!((eta_eval(&eta, h).unwrap() - eta_eval(&eta, -h).unwrap()).abs() / (2.0 * h) < 1e-8);
    for i in 0..100 {
        let x = -3.99 + 7.98 * i as f64 / 99.0;
        assert_eq!(eta_eval(&eta, x).unwrap(), eta_eval(&eta, -x).unwrap());
    }
}
