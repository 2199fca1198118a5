//! Command dispatch. Each command writes its CSV files into the output
//! directory and returns their paths.

use std::path::{Path, PathBuf};

use toa::quadrature::{Grid1D, OscillationBudget};
use toa::specialfns::{u_moment, u_pairing, RegularizedZeta};
use toa::states::{
    arrival_phase_rate, correlated_pair, pair_state, GaussianPacket, HermitePacket, MixedState, MomentumState, Statistics,
    ThermalState, TwoParticleState,
};
use toa::toa_pair::{coherence, coincidence_curve, cs_ratio_curve, marginal_density, pair_density, witness_check, Verdict};
use toa::toa_sequential::{reduced_state_on, sequential_density, time_of_flight_density, tof_mean};
use toa::toa_single::{
    arrival_density, arrival_moments, discriminability, mixed_arrival_density, DensityCurve, DetectorConfig, EtaFamily,
};
use toa::Complex64;

use crate::config::{fmt_f64, Command, Family, Figure, RunConfig, StateKind, Stats};
use crate::{csv, CliError};

const HBAR_SI: f64 = 1.054_571_817e-34;
/// Half-width of default time windows in units of the arrival-time spread.
const WINDOW_SPREADS: f64 = 6.0;
const PAIR_PANELS: usize = 12;

type Outcome = Result<Vec<PathBuf>, CliError>;

pub fn run(cfg: &RunConfig, out: &Path) -> Outcome {
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
    let mut ctx = Writer { dir: out.to_path_buf(), written: Vec::new() };
    match cfg.command {
        Command::Single => single(cfg, &mut ctx)?,
        Command::Pair => pair(cfg, &mut ctx)?,
        Command::Sequential => sequential(cfg, &mut ctx)?,
        Command::Witness => witness(cfg, &mut ctx)?,
        Command::Special => special(cfg, &mut ctx)?,
        Command::Figure => match cfg.figure.expect("validated") {
            Figure::Fig1 => fig1(cfg, &mut ctx)?,
            Figure::Fig2 => fig2(cfg, &mut ctx)?,
            Figure::Fig3 => fig3(cfg, &mut ctx)?,
            Figure::Fig4 => fig4(cfg, &mut ctx)?,
        },
    }
    Ok(ctx.written)
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn put(&mut self, name: &str, content: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        csv::write(&path, &content)?;
        self.written.push(path);
        Ok(())
    }

    fn curve(&mut self, name: &str, x: &str, curve: &DensityCurve) -> Result<(), CliError> {
        let rows = curve.times.iter().zip(&curve.density).map(|(&t, &p)| vec![t, p]);
        self.put(name, csv::numeric(&[x, "density"], rows))
    }
}

fn family(cfg: &RunConfig) -> EtaFamily {
    match cfg.detector.family {
        Family::Qtp => EtaFamily::qtp(),
        Family::Kijowski => EtaFamily::kijowski(),
        Family::Current => EtaFamily::current(),
    }
}

fn detector(cfg: &RunConfig, l: f64) -> DetectorConfig {
    let mut d = DetectorConfig::ideal(l).with_smear(cfg.detector.smear);
    let table = cfg.detector.alpha.clone();
    if !table.is_empty() {
        d = d.with_absorption(move |e| interpolate_table(&table, e));
    }
    d
}

/// Piecewise-linear in energy, constant beyond the ends.
fn interpolate_table(table: &[(f64, f64)], e: f64) -> f64 {
    let i = table.partition_point(|&(x, _)| x <= e);
    if i == 0 {
        return table[0].1;
    }
    if i == table.len() {
        return table[i - 1].1;
    }
    let ((x0, a0), (x1, a1)) = (table[i - 1], table[i]);
    a0 + (a1 - a0) * (e - x0) / (x1 - x0)
}

fn statistics(s: Stats) -> Statistics {
    match s {
        Stats::Boson => Statistics::Boson,
        Stats::Fermion => Statistics::Fermion,
        Stats::Distinguishable => Statistics::Distinguishable,
    }
}

fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

/// The packets of the state block: one for packets, two otherwise.
fn packets(cfg: &RunConfig) -> Result<Vec<GaussianPacket>, CliError> {
    let s = &cfg.state;
    let first = GaussianPacket::new(s.x0, s.p0, s.sigma_x, s.mass)?;
    Ok(match s.kind {
        StateKind::Packet => vec![first],
        _ => vec![first, GaussianPacket::new(s.x2, s.p2, s.sigma_x, s.mass)?],
    })
}

/// Classical mean arrival time ± six spreads, combining free spreading and the
/// initial width, over all packets.
fn classical_window(packets: &[GaussianPacket], l: f64) -> (f64, f64) {
    packets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let tbar = p.classical_arrival(l);
        let spread = p.mass * ((l - p.x0).abs() * p.momentum_spread() + p.sigma_x * p.p0) / (p.p0 * p.p0);
        (lo.min(tbar - WINDOW_SPREADS * spread), hi.max(tbar + WINDOW_SPREADS * spread))
    })
}

fn time_grid(lo: Option<f64>, hi: Option<f64>, n: usize, fallback: (f64, f64)) -> Vec<f64> {
    match (lo, hi) {
        (Some(a), Some(b)) => uniform(a, b, n),
        _ => uniform(fallback.0, fallback.1, n),
    }
}

fn modes(cfg: &RunConfig, packets: &[GaussianPacket]) -> Vec<(Complex64, HermitePacket)> {
    let s = &cfg.state;
    let mut m = vec![(Complex64::new(s.c1, 0.0), packets[0].mode())];
    if packets.len() > 1 {
        m.push((Complex64::from_polar(s.c2, s.phase), packets[1].mode()));
    }
    if s.kind == StateKind::Packet {
        m[0].0 = Complex64::new(1.0, 0.0);
    }
    m
}

fn si_rows(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    if !cfg.units.si {
        return Vec::new();
    }
    let unit = cfg.units.mass_kg * cfg.units.sigma_x_m.powi(2) / HBAR_SI;
    vec![("time_unit_s", fmt_f64(unit))]
}

fn single(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let l = cfg.detector.l;
    let det = detector(cfg, l);
    let fam = family(cfg);
    let mut rows = Vec::new();
    let curve = if cfg.state.kind == StateKind::Thermal {
        let s = &cfg.state;
        let th = ThermalState::new(s.beta, s.mass, s.sigma_x)?;
        let (nu, tau) = discriminability(s.beta, s.mass, l)?;
        let times = time_grid(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.n, (0.01 * tau, 3.0 * tau));
        let kmax = th.momentum_cutoff();
        let xw = 8.0 * s.sigma_x;
        let rate = arrival_phase_rate((0.0, kmax), (-xw, xw), &[l], (times[0], times[times.len() - 1]), s.mass);
        let grid = OscillationBudget::with_rate(rate)?.grid(0.0, kmax, 16, 8)?;
        let state = MixedState::thermal(&th, grid)?;
        rows.push(("nu", fmt_f64(nu)));
        rows.push(("tau", fmt_f64(tau)));
        if cfg.units.si {
            let unit = cfg.units.mass_kg * cfg.units.sigma_x_m.powi(2) / HBAR_SI;
            rows.push(("tau_s", fmt_f64(tau * unit)));
        }
        mixed_arrival_density(&state, &det, &fam, &times)?
    } else {
        let pk = packets(cfg)?;
        let times = time_grid(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.n, classical_window(&pk, l));
        let state = MomentumState::for_detection(modes(cfg, &pk), l, (times[0], times[times.len() - 1]))?;
        arrival_density(&state, &det, &fam, &times)?
    };
    let mut summary = vec![
        ("family", fam.name().to_string()),
        ("detected", fmt_f64(curve.detected())),
        ("no_detection", fmt_f64(curve.no_detection)),
    ];
    // a thermal cloud has a t⁻³ tail of slow atoms, so its variance does not exist
    if cfg.state.kind != StateKind::Thermal {
        let (mean, var) = arrival_moments(&curve)?;
        summary.push(("mean_time", fmt_f64(mean)));
        summary.push(("variance", fmt_f64(var)));
    }
    summary.extend(rows);
    summary.extend(si_rows(cfg));
    out.curve("density.csv", "t", &curve)?;
    out.put("summary.csv", csv::summary(&summary))
}

/// The two-particle state with the time window its arrivals fall in.
fn two_particle(cfg: &RunConfig, ls: &[f64]) -> Result<(TwoParticleState, (f64, f64)), CliError> {
    let s = &cfg.state;
    let lmax = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = ls.iter().cloned().fold(f64::INFINITY, f64::min);
    if s.kind == StateKind::Correlated {
        let back = s.back_time.unwrap_or(0.0);
        let st = correlated_pair(s.correlation, s.x0, s.p0, s.sigma_x, s.mass, back, PAIR_PANELS)?;
        let centre = GaussianPacket::new(s.x0, s.p0, s.sigma_x, s.mass)?;
        // the highest Hermite mode is √(2·order+1) times wider than the ground mode
        let widen = (2.0 * toa::states::MAX_RANK as f64 - 1.0).sqrt();
        let (a, b) = classical_window(&[centre], lmin);
        let (c, d) = classical_window(&[centre], lmax);
        let half = 0.5 * widen * (b - a).max(d - c);
        let window = (back + 0.5 * (a + b) - half, back + 0.5 * (c + d) + half);
        return Ok((st, window));
    }
    let pk = packets(cfg)?;
    let (a, _) = classical_window(&pk, lmin);
    let (_, b) = classical_window(&pk, lmax);
    let s1 = MomentumState::packet_for_detection(&pk[0], lmax, (a, b))?;
    let s2 = MomentumState::packet_for_detection(&pk[1], lmax, (a, b))?;
    Ok((pair_state(&s1, &s2, statistics(s.statistics))?, (a, b)))
}

fn pair(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let (l1, l2) = (cfg.detector.l, cfg.detector.l2.unwrap_or(cfg.detector.l));
    let (st, window) = two_particle(cfg, &[l1, l2])?;
    let g = &cfg.grid;
    let t1 = time_grid(g.t_min, g.t_max, g.n, window);
    let t2 = time_grid(g.t2_min, g.t2_max, g.n2, window);
    let (d1, d2) = (detector(cfg, l1), detector(cfg, l2));
    let fam = family(cfg);
    let surface = pair_density(&st, &d1, &d2, &fam, &t1, &t2)?;
    let rows = t1.iter().enumerate().flat_map(|(i, &a)| t2.iter().enumerate().map(move |(j, &b)| (i, j, a, b)));
    out.put("surface.csv", csv::numeric(&["t1", "t2", "density"], rows.map(|(i, j, a, b)| vec![a, b, surface.density[i][j]])))?;
    out.curve("marginal1.csv", "t", &marginal_density(&st, &d1, &fam, 1, &t1)?)?;
    out.curve("marginal2.csv", "t", &marginal_density(&st, &d2, &fam, 2, &t2)?)?;
    if l1 == l2 {
        let c = coincidence_curve(&st, &d1, &fam, &t1)?;
        out.put("coincidence.csv", csv::numeric(&["t", "c2"], t1.iter().zip(&c).map(|(&t, &v)| vec![t, v])))?;
    }
    let mut summary = vec![("family", fam.name().to_string()), ("detected_mass", fmt_f64(surface.total_mass()))];
    summary.extend(si_rows(cfg));
    out.put("summary.csv", csv::summary(&summary))
}

fn witness(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let (l1, l2) = (cfg.detector.l, cfg.detector.l2.unwrap_or(cfg.detector.l));
    let (st, _) = two_particle(cfg, &[l1, l2])?;
    let r = witness_check(&st, l1, l2)?;
    let verdict = match r.verdict {
        Verdict::ConsistentWithSeparable => "consistent_with_separable",
        Verdict::WitnessedEntangled => "witnessed_entangled",
    };
    let summary = [
        ("dt_plus_sq", fmt_f64(r.dt_plus)),
        ("dt_minus_sq", fmt_f64(r.dt_minus)),
        ("dh_plus", fmt_f64(r.dh_plus)),
        ("dh_minus", fmt_f64(r.dh_minus)),
        ("h_inv2_sum", fmt_f64(r.h_inv2_sum)),
        ("lhs_minus_rhs_plus", fmt_f64(r.lhs_minus_rhs.0)),
        ("lhs_minus_rhs_minus", fmt_f64(r.lhs_minus_rhs.1)),
        ("verdict", verdict.to_string()),
    ];
    out.put("witness.csv", csv::summary(&summary))
}

fn sequential(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let (l1, l2) = (cfg.detector.l, cfg.detector.l2.expect("validated"));
    let ell = l2 - l1;
    let pk = packets(cfg)?;
    let m = cfg.state.mass;
    let g = &cfg.grid;
    let t1 = time_grid(g.t_min, g.t_max, g.n, classical_window(&pk, l1));
    let (plo, phi) = pk.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
        (lo.min(p.p0 - WINDOW_SPREADS * p.momentum_spread()), hi.max(p.p0 + WINDOW_SPREADS * p.momentum_spread()))
    });
    if !(plo > 0.0) {
        return Err(toa::ToaError::InvalidArgument("sequential defaults need p0 well above its spread".into()).into());
    }
    let fallback = (t1[0] + m * ell / phi, t1[t1.len() - 1] + 1.5 * m * ell / plo);
    let t2 = time_grid(g.t2_min, g.t2_max, g.n2, fallback);
    let state = MomentumState::for_detection(modes(cfg, &pk), l2, (t1[0].min(t2[0]), t2[t2.len() - 1]))?;
    let surface = sequential_density(&state, l1, l2, &t1, &t2)?;
    let rows = t1.iter().enumerate().flat_map(|(i, &a)| t2.iter().enumerate().map(move |(j, &b)| (i, j, a, b)));
    out.put("surface.csv", csv::numeric(&["t1", "t2", "density"], rows.map(|(i, j, a, b)| vec![a, b, surface.density[i][j]])))?;

    let tau_max = g.tau_max.unwrap_or(3.0 * m * ell / pk[0].p0);
    let taus = uniform(0.0, tau_max, g.n_tau);
    let tof = time_of_flight_density(&state, l1, l2, &taus)?;
    out.curve("tof.csv", "tau", &tof)?;

    let t_red = g.t_reduced.unwrap_or(pk[0].classical_arrival(l1));
    let (ka, kb) = state.momentum_range();
    let red = reduced_state_on(&state, l1, t_red, Grid1D::uniform(g.n_k, ka.max(1e-9 * kb), kb)?)?;
    let k = red.grid().nodes();
    let rows = (0..k.len()).flat_map(|i| (0..k.len()).map(move |j| (i, j)));
    out.put(
        "reduced_state.csv",
        csv::numeric(&["k", "k2", "re", "im"], rows.map(|(i, j)| {
            let z = red.element(i, j);
            vec![k[i], k[j], z.re, z.im]
        })),
    )?;
    let mut summary = vec![
        ("detected_mass", fmt_f64(surface.total_mass())),
        ("flight_time_classical", fmt_f64(m * ell / pk[0].p0)),
        ("tof_mean_at_p0", fmt_f64(tof_mean(pk[0].p0, l1, l2, m)?)),
        ("reduced_time", fmt_f64(t_red)),
        ("reduced_trace", fmt_f64(red.trace())),
    ];
    summary.extend(si_rows(cfg));
    out.put("summary.csv", csv::summary(&summary))
}

/// sⁿ with a smooth cutoff exp(−(s/R)⁸), paired exactly with u.
fn cutoff_moment(n: i32, r: f64) -> Result<f64, CliError> {
    Ok(u_pairing(move |s: f64| s.powi(n) * (-(s / r).powi(8)).exp(), 2.0 * r)?)
}

fn zeta_table(cfg: &RunConfig) -> Result<String, CliError> {
    let z = RegularizedZeta::new(cfg.special.epsilon)?;
    let s = uniform(cfg.special.s_min, cfg.special.s_max, cfg.special.n);
    Ok(csv::numeric(&["s", "zeta"], s.iter().map(|&s| vec![s, z.eval(s)])))
}

fn special(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    out.put("zeta.csv", zeta_table(cfg)?)?;
    let rows = (0..=6)
        .map(|n| Ok(vec![n as f64, u_moment(n as i64)?, cutoff_moment(n, cfg.special.cutoff)?]))
        .collect::<Result<Vec<_>, CliError>>()?;
    out.put("moments.csv", csv::numeric(&["n", "exact", "pairing"], rows))
}

/// Pair state of a figure with the second packet moved to `x2`.
fn figure_state(cfg: &RunConfig, x2: f64, stats: Stats, window: (f64, f64)) -> Result<TwoParticleState, CliError> {
    let s = &cfg.state;
    let l = cfg.detector.l;
    let p1 = GaussianPacket::new(s.x0, s.p0, s.sigma_x, s.mass)?;
    let p2 = GaussianPacket::new(x2, s.p2, s.sigma_x, s.mass)?;
    let s1 = MomentumState::packet_for_detection(&p1, l, window)?;
    let s2 = MomentumState::packet_for_detection(&p2, l, window)?;
    Ok(pair_state(&s1, &s2, statistics(stats))?)
}

fn figure_times(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let pk = packets(cfg)?;
    Ok(time_grid(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.n, classical_window(&pk, cfg.detector.l)))
}

/// Single-time density and bosonic c⁽²⁾ for equal mean arrival times, then with
/// the first packet arriving at 0.99 of the second's mean time.
fn fig1(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let times = figure_times(cfg)?;
    let window = (times[0], times[times.len() - 1]);
    let s = &cfg.state;
    let l = cfg.detector.l;
    let det = detector(cfg, l);
    let fam = family(cfg);
    let t1bar = s.mass * (l - s.x0) / s.p0;
    let shifted_x2 = l - s.p2 * t1bar / (0.99 * s.mass);
    let mut columns = Vec::new();
    for x2 in [s.x2, shifted_x2] {
        let st = figure_state(cfg, x2, s.statistics, window)?;
        columns.push(marginal_density(&st, &det, &fam, 1, &times)?.density);
        columns.push(coincidence_curve(&st, &det, &fam, &times)?);
    }
    let rows = times.iter().enumerate().map(|(i, &t)| vec![t, columns[0][i], columns[1][i], columns[2][i], columns[3][i]]);
    out.put("fig1.csv", csv::numeric(&["t", "density_equal", "c2_equal", "density_shifted", "c2_shifted"], rows))
}

/// C⁽²⁾(t̄, t₂) against t₂.
fn fig2(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let times = figure_times(cfg)?;
    let s = &cfg.state;
    let l = cfg.detector.l;
    let tbar = s.mass * (l - s.x0) / s.p0;
    let h = 1e-4 * (times[times.len() - 1] - times[0]);
    let t1 = [tbar - h, tbar, tbar + h];
    let window = (times[0].min(t1[0]), times[times.len() - 1].max(t1[2]));
    let st = figure_state(cfg, s.x2, s.statistics, window)?;
    let det = detector(cfg, l);
    let fam = family(cfg);
    let surface = pair_density(&st, &det, &det, &fam, &t1, &times)?;
    let at_t1 = marginal_density(&st, &det, &fam, 1, &t1)?;
    let along = marginal_density(&st, &det, &fam, 2, &times)?;
    let c = times.iter().map(|&t2| coherence(&surface, &at_t1, &along, tbar, t2)).collect::<Result<Vec<_>, _>>()?;
    out.put("fig2.csv", csv::numeric(&["t2", "coherence"], times.iter().zip(&c).map(|(&t, &v)| vec![t, v])))
}

/// h(t̄, t₂) against t₂; points where a density or the coherence falls below the
/// division guard are left out.
fn fig3(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    let times = figure_times(cfg)?;
    let s = &cfg.state;
    let l = cfg.detector.l;
    let tbar = s.mass * (l - s.x0) / s.p0;
    let st = figure_state(cfg, s.x2, s.statistics, (times[0], times[times.len() - 1]))?;
    let h = cs_ratio_curve(&st, &detector(cfg, l), &family(cfg), tbar, &times)?;
    let rows = times.iter().zip(h).filter_map(|(&t, v)| v.ok().map(|v| vec![t, v]));
    out.put("fig3.csv", csv::numeric(&["t2", "h"], rows))
}

fn fig4(cfg: &RunConfig, out: &mut Writer) -> Result<(), CliError> {
    out.put("fig4.csv", zeta_table(cfg)?)
}
