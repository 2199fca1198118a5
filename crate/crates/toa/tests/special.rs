use std::f64::consts::PI;
use toa::quadrature::gauss_legendre_on_breaks;
use toa::specialfns::*;
use toa::states::{packet_wigner, GaussianPacket, MomentumState, WignerFunction};
use toa::toa_single::{arrival_density, DetectorConfig, EtaFamily};

/// (1/√(2π))∫√(1+ξ²/a²)e^{−ξ²/2}dξ, i.e. ∫u(s)e^{−s²/(2a²)}ds via z(μ).
const GAUSS_PAIRING_A1: f64 = 1.3545308064813155;
const GAUSS_PAIRING_A5: f64 = 1.0194515166225713;

fn gauss(a: f64) -> impl Fn(f64) -> f64 + Copy {
    move |s: f64| (-s * s / (2.0 * a * a)).exp()
}

#[test]
fn generating_function() {
    assert_eq!(u_generating(0.0), 1.0);
    assert!((u_generating(1e8) / 1e8 - 1.0).abs() < 1e-12);
    for mu in [0.3, 2.0, 17.0] {
        assert_eq!(u_generating(mu), u_generating(-mu));
    }
}

#[test]
fn zeta_limits() {
    let z = RegularizedZeta::new(1e-5).unwrap();
    assert_eq!(z.eval(0.0), 0.0);
    for s in [8.0, 20.0, 55.0] {
        assert!((z.eval(s) - 0.5).abs() < 1e-3, "ζ({s}) = {}", z.eval(s));
        assert!((z.eval(-s) + 0.5).abs() < 1e-3);
    }
    for s in [0.1e-5, 0.5e-5, 1e-5, 2e-5] {
        let cauchy = s / (PI * (s * s + 1e-10));
        assert!((z.eval(s) / cauchy - 1.0).abs() < 1e-3, "s = {s}");
    }
    for s in [1e-7, 3e-4, 0.02, 0.3, 1.7, 40.0] {
        assert!((z.eval(s) + z.eval(-s)).abs() < 1e-10);
    }
    assert!(RegularizedZeta::new(0.0).is_err());
    assert!(RegularizedZeta::new(-1.0).is_err());
}

#[test]
fn zeta_matches_the_bessel_form_away_from_the_origin() {
    // ζ = (1/π)[1/s + ∫₀^s (1/σ² − K₁(σ)/σ)dσ] once s ≫ ε.
    let g = |s: f64| 1.0 / (s * s) - bessel_k1(s) / s;
    // below δ, g ≈ −½[ln(σ/2) + γ − ½]
    let delta = 1e-4f64;
    let head = -0.5 * (delta * (0.5 * delta).ln() - delta + (0.577_215_664_901_532_9 - 0.5) * delta);
    let z = RegularizedZeta::new(1e-9).unwrap();
    for s in [0.05, 0.4, 1.5, 4.0] {
        let grid = gauss_legendre_on_breaks(&geometric_breaks(delta, s), 24).unwrap();
        let limit = (1.0 / s + head + grid.integrate(g)) / PI;
        assert!((z.eval(s) - limit).abs() < 1e-8, "s = {s}: {} vs {limit}", z.eval(s));
    }
}

/// K₁(x) = ∫₀^∞ e^{−x cosh t} cosh t dt.
fn bessel_k1(x: f64) -> f64 {
    let grid = gauss_legendre_on_breaks(&(0..=200).map(|i| i as f64 * 0.1).collect::<Vec<_>>(), 16).unwrap();
    grid.integrate(|t| (-x * t.cosh()).exp() * t.cosh())
}

fn geometric_breaks(from: f64, to: f64) -> Vec<f64> {
    let mut b = vec![from];
    while b[b.len() - 1] * 2.0 < to {
        b.push(b[b.len() - 1] * 2.0);
    }
    b.push(to);
    b
}

#[test]
fn series_coefficients_are_those_of_the_square_root() {
    assert_eq!(u_series_coefficients(0).unwrap(), vec![1.0]);
    let c = u_series_coefficients(6).unwrap();
    let expect = [1.0, -0.5, -0.125, -0.0625, -5.0 / 128.0, -7.0 / 256.0, -21.0 / 1024.0];
    assert_eq!(c.len(), 7);
    for (a, b) in c.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(u_series_coefficients(7).is_err());
}

#[test]
fn moments() {
    let expect = [1.0, 0.0, -1.0, 0.0, -3.0, 0.0, -45.0];
    for (n, e) in expect.iter().enumerate() {
        assert_eq!(u_moment(n as i64).unwrap(), *e);
    }
    assert!(u_moment(-1).is_err());
}

#[test]
fn gaussian_pairing_matches_the_generating_function() {
    let exact = u_pairing(gauss(1.0), 12.0).unwrap();
    assert!((exact - GAUSS_PAIRING_A1).abs() < 1e-10, "{exact}");
    let smeared = u_smeared_extrapolated(gauss(1.0), 1e-3, 12.0).unwrap();
    assert!((smeared - GAUSS_PAIRING_A1).abs() < 1e-6, "{smeared}");
    // Finite ε undershoots by O(ε).
    let rough = u_smeared(gauss(1.0), 1e-2, 12.0).unwrap();
    assert!(rough < GAUSS_PAIRING_A1 && GAUSS_PAIRING_A1 - rough < 2e-2);
}

#[test]
fn wide_gaussian_follows_the_scaling_series() {
    // ∫u(s)G(s/a)ds = Σ c_k a^{−2k} G⁽²ᵏ⁾(0), G⁽²ᵏ⁾(0) = (−1)ᵏ(2k−1)!! for the Gaussian.
    let a = 5.0f64;
    let mut binom = 1.0;
    let mut dfact = 1.0;
    let mut series = 1.0;
    let mut next = 0.0;
    for k in 1..=7 {
        binom *= (0.5 - (k - 1) as f64) / k as f64;
        dfact *= (2 * k - 1) as f64;
        let term = binom * dfact * a.powi(-2 * k);
        if k == 7 {
            next = term.abs();
        } else {
            series += term;
        }
    }
    let paired = u_pairing(gauss(a), 60.0).unwrap();
    assert!((series - GAUSS_PAIRING_A5).abs() < 2.0 * next);
    assert!((paired - GAUSS_PAIRING_A5).abs() < 1e-10, "{paired}");
}

#[test]
fn differentiated_zeta_converges_to_the_pairing() {
    // ∫(dζ_ε/ds) f ds with a finite-difference derivative, Richardson in ε.
    let f = gauss(1.0);
    let paired = |eps: f64| {
        let z = RegularizedZeta::new(eps).unwrap();
        let h = 1e-3 * eps;
        let mut breaks: Vec<f64> = (0..24).map(|i| 0.5 * 0.5f64.powi(i)).filter(|&b| b > 1e-3 * eps).collect();
        breaks.push(0.0);
        breaks.reverse();
        breaks.extend((1..=23).map(|i| 0.5 * i as f64 + 0.5));
        let grid = gauss_legendre_on_breaks(&breaks, 16).unwrap();
        grid.integrate(|s| (z.eval(s + h) - z.eval(s - h)) / (2.0 * h) * (f(s) + f(-s)))
    };
    let (a, b, c) = (paired(1e-3), paired(1e-4), paired(1e-5));
    let extrapolated = (100.0 * (10.0 * c - b) / 9.0 - (10.0 * b - a) / 9.0) / 99.0;
    let target = u_pairing(f, 12.0).unwrap();
    assert!(((extrapolated - target) / target).abs() < 1e-3, "{extrapolated} vs {target}");
}

#[test]
fn moments_with_a_cutoff() {
    let r = 30.0;
    for n in 0..=6 {
        let f = move |s: f64| s.powi(n) * (-(s / r).powi(8)).exp();
        let m = u_smeared_extrapolated(f, 1e-3, 2.0 * r).unwrap();
        let exact = u_moment(n as i64).unwrap();
        assert!((m - exact).abs() < 1e-2 * exact.abs().max(1.0), "n = {n}: {m} vs {exact}");
    }
}

#[test]
fn constant_with_cutoff_tends_to_one() {
    let mut last = f64::INFINITY;
    for r in [2.0, 5.0, 20.0] {
        let gap = (u_pairing(gauss(r), 12.0 * r).unwrap() - 1.0).abs();
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 2e-3);
}

#[test]
fn pairing_is_negative_away_from_the_origin() {
    let delta = 0.3;
    for (centre, width) in [(1.0, 0.5), (2.5, 2.0), (-1.5, 1.0)] {
        let bump = move |s: f64| {
            let y = (s - centre) / width;
            if y.abs() < 1.0 && s.abs() > delta { (-1.0 / (1.0 - y * y)).exp() } else { 0.0 }
        };
        let p = u_pairing(bump, 6.0).unwrap();
        assert!(p < 0.0, "centre {centre}: {p}");
    }
}

#[test]
fn non_decaying_test_functions_are_rejected() {
    assert!(u_pairing(|s| s, 5.0).is_err());
    assert!(u_smeared(|_| 1.0, 1e-3, 5.0).is_err());
    assert!(u_smeared(gauss(1.0), 0.0, 12.0).is_err());
    assert!(u_pairing(gauss(1.0), -1.0).is_err());
}

#[test]
fn wigner_picture_density_agrees_with_the_momentum_picture() {
    let packet = GaussianPacket::new(-4.0, 6.0, 1.0, 1.0).unwrap();
    let l = 3.0;
    let times: Vec<f64> = (0..=40).map(|i| 0.3 + 1.4 * i as f64 / 40.0).collect();
    let w = packet_wigner(&packet);
    let wigner = wigner_arrival_density(&w, l, 1.0, &times, 4).unwrap();
    let state = MomentumState::packet_for_detection(&packet, l, (0.0, 3.0)).unwrap();
    let direct = arrival_density(&state, &DetectorConfig::ideal(l), &EtaFamily::qtp(), &times).unwrap();
    let peak = direct.density.iter().cloned().fold(0.0, f64::max);
    for (i, (a, b)) in wigner.density.iter().zip(&direct.density).enumerate() {
        assert!((a - b).abs() < 1e-6 * peak, "t = {}: {a} vs {b}", times[i]);
        assert!(*a >= -1e-8);
    }
}

#[test]
fn classical_bump_gives_negative_probabilities() {
    // Supported on X ∈ [−3, −2], P ∈ [1, 2]; before arrival L − X − tP stays positive.
    let bump = |y: f64| if y.abs() < 1.0 { (-1.0 / (1.0 - y * y)).exp() } else { 0.0 };
    let w = WignerFunction::new(move |x, p| bump(2.0 * (x + 2.5)) * bump(2.0 * (p - 1.5)), (-3.0, -2.0, 1.0, 2.0));
    let d = wigner_arrival_density(&w, 0.0, 1.0, &[0.2, 0.5, 0.9], 4).unwrap();
    for v in &d.density {
        assert!(*v < -1e-6, "{v}");
    }
}
