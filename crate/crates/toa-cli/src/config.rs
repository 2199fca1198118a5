//! Line-based run configuration: `section.key = value`, `#` starts a comment.
//!
//! Parsing is strict. Unknown keys, repeated keys and malformed values are
//! errors carrying the line number. Defaults depend on `run.command` and
//! `run.figure`, which are read first wherever they appear in the text.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::ConfigError;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(Command {
    Single => "single",
    Pair => "pair",
    Sequential => "sequential",
    Witness => "witness",
    Special => "special",
    Figure => "figure",
});

keyword_enum!(Figure {
    Fig1 => "fig1",
    Fig2 => "fig2",
    Fig3 => "fig3",
    Fig4 => "fig4",
});

keyword_enum!(StateKind {
    Packet => "packet",
    Superposition => "superposition",
    Pair => "pair",
    Correlated => "correlated",
    Thermal => "thermal",
});

keyword_enum!(Family {
    Qtp => "qtp",
    Kijowski => "kijowski",
    Current => "current",
});

keyword_enum!(Stats {
    Boson => "boson",
    Fermion => "fermion",
    Distinguishable => "distinguishable",
});

/// Packet, superposition, pair, correlated pair or thermal ensemble. The
/// second packet (`x2`, `p2`) is used by superpositions and pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBlock {
    pub kind: StateKind,
    pub x0: f64,
    pub p0: f64,
    pub sigma_x: f64,
    pub mass: f64,
    pub x2: f64,
    pub p2: f64,
    pub c1: f64,
    pub c2: f64,
    pub phase: f64,
    pub statistics: Stats,
    pub correlation: f64,
    pub back_time: Option<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBlock {
    pub l: f64,
    pub l2: Option<f64>,
    pub family: Family,
    pub smear: f64,
    /// Absorption rate against energy, (E, α) pairs interpolated linearly.
    pub alpha: Vec<(f64, f64)>,
}

/// Unset bounds are derived from the state and detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub n: usize,
    pub t2_min: Option<f64>,
    pub t2_max: Option<f64>,
    pub n2: usize,
    pub t_reduced: Option<f64>,
    pub tau_max: Option<f64>,
    pub n_tau: usize,
    /// Momentum nodes per axis of the reduced-state table.
    pub n_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialBlock {
    pub epsilon: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitsBlock {
    pub si: bool,
    pub mass_kg: f64,
    pub sigma_x_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub figure: Option<Figure>,
    pub state: StateBlock,
    pub detector: DetectorBlock,
    pub grid: GridBlock,
    pub special: SpecialBlock,
    pub units: UnitsBlock,
    pub output_dir: Option<String>,
}

impl RunConfig {
    /// Defaults for a command, with the caption parameters of a figure if one is named.
    pub fn defaults(command: Command, figure: Option<Figure>) -> Self {
        let mut c = RunConfig {
            command,
            figure,
            state: StateBlock {
                kind: StateKind::Packet,
                x0: -5.0,
                p0: 10.0,
                sigma_x: 1.0,
                mass: 1.0,
                x2: -25.0,
                p2: 12.0,
                c1: 1.0,
                c2: 1.0,
                phase: 0.0,
                statistics: Stats::Boson,
                correlation: 0.6,
                back_time: None,
                beta: 1.0,
            },
            detector: DetectorBlock { l: 20.0, l2: None, family: Family::Qtp, smear: 0.0, alpha: Vec::new() },
            grid: GridBlock {
                t_min: None,
                t_max: None,
                n: 801,
                t2_min: None,
                t2_max: None,
                n2: 801,
                t_reduced: None,
                tau_max: None,
                n_tau: 801,
                n_k: 64,
            },
            special: SpecialBlock { epsilon: 1e-5, s_min: -0.3, s_max: 0.3, n: 601, cutoff: 30.0 },
            units: UnitsBlock { si: false, mass_kg: 1.66053906660e-27, sigma_x_m: 1e-6 },
            output_dir: None,
        };
        match command {
            Command::Pair => {
                c.state.kind = StateKind::Pair;
                c.grid.n = 321;
                c.grid.n2 = 321;
            }
            Command::Witness => {
                c.state.kind = StateKind::Correlated;
                c.state.x0 = 20.0;
                c.state.p0 = 12.0;
                // focused at the detector 40/p₀ after preparation
                c.state.back_time = Some(40.0 / 12.0);
            }
            Command::Sequential => {
                c.state.x0 = 0.0;
                c.state.p0 = 20.0;
                c.state.sigma_x = 2.0;
                c.detector.l = 10.0;
                c.detector.l2 = Some(20.0);
                c.grid.n = 61;
                c.grid.n2 = 241;
            }
            _ => {}
        }
        if let Some(fig) = figure {
            c.apply_figure(fig);
        }
        c
    }

    /// Packets with p₁ = 100 at x₁ = 0 and a detector at L = 1000 (σ_X = m = 1);
    /// x₂ puts the second mean arrival time at 10, the first one's.
    fn apply_figure(&mut self, fig: Figure) {
        if fig == Figure::Fig4 {
            return;
        }
        let s = &mut self.state;
        s.kind = StateKind::Pair;
        s.x0 = 0.0;
        s.p0 = 100.0;
        s.sigma_x = 1.0;
        s.mass = 1.0;
        self.detector.l = 1000.0;
        self.detector.family = Family::Kijowski;
        let (p2, stats, window, n) = match fig {
            Figure::Fig1 => (110.0, Stats::Boson, (9.75, 10.35), 1601),
            Figure::Fig2 => (102.0, Stats::Fermion, (9.9, 10.1), 801),
            _ => (102.0, Stats::Boson, (9.75, 10.25), 1001),
        };
        s.p2 = p2;
        s.x2 = 1000.0 - p2 * 10.0;
        s.statistics = stats;
        self.grid.t_min = Some(window.0);
        self.grid.t_max = Some(window.1);
        self.grid.n = n;
    }

    /// Checks the guards every command relies on; the message names the key.
    pub fn validate(&self) -> Result<(), String> {
        let s = &self.state;
        let positive = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(format!("{key} must be positive and finite, got {v}")) };
        let finite = |key: &str, v: f64| if v.is_finite() { Ok(()) } else { Err(format!("{key} must be finite, got {v}")) };
        positive("state.mass", s.mass)?;
        positive("state.sigma_x", s.sigma_x)?;
        for (key, v) in [("state.x0", s.x0), ("state.x2", s.x2), ("state.c1", s.c1), ("state.c2", s.c2), ("state.phase", s.phase)] {
            finite(key, v)?;
        }
        if let Some(b) = s.back_time {
            finite("state.back_time", b)?;
        }
        finite("detector.l", self.detector.l)?;
        if let Some(l2) = self.detector.l2 {
            finite("detector.l2", l2)?;
        }
        if !(self.detector.smear >= 0.0 && self.detector.smear.is_finite()) {
            return Err(format!("detector.smear must be non-negative, got {}", self.detector.smear));
        }
        if self.detector.alpha.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err("detector.alpha energies must be strictly increasing".into());
        }
        if self.detector.alpha.iter().any(|&(e, a)| !e.is_finite() || !(a >= 0.0 && a.is_finite())) {
            return Err("detector.alpha needs finite energies and non-negative finite rates".into());
        }
        match s.kind {
            StateKind::Packet => positive("state.p0", s.p0)?,
            StateKind::Superposition | StateKind::Pair => {
                positive("state.p0", s.p0)?;
                positive("state.p2", s.p2)?;
            }
            StateKind::Correlated => {
                positive("state.p0", s.p0)?;
                if !(s.correlation.abs() < 1.0) {
                    return Err(format!("state.correlation must satisfy |r| < 1, got {}", s.correlation));
                }
            }
            StateKind::Thermal => {
                positive("state.beta", s.beta)?;
                if !(self.detector.l > 8.0 * s.sigma_x) {
                    return Err("detector.l must exceed 8·state.sigma_x so the thermal cloud starts before the detector".into());
                }
            }
        }
        if s.kind == StateKind::Superposition && s.c1 == 0.0 && s.c2 == 0.0 {
            return Err("state.c1 and state.c2 cannot both vanish".into());
        }
        let allowed: &[StateKind] = match self.command {
            Command::Single => &[StateKind::Packet, StateKind::Superposition, StateKind::Thermal],
            Command::Pair | Command::Witness => &[StateKind::Pair, StateKind::Correlated],
            Command::Sequential => &[StateKind::Packet, StateKind::Superposition],
            Command::Special => StateKind::ALL,
            Command::Figure => match self.figure {
                None => return Err("run.figure is required for the figure command".into()),
                Some(Figure::Fig4) => StateKind::ALL,
                Some(_) => &[StateKind::Pair],
            },
        };
        if !allowed.contains(&s.kind) {
            return Err(format!("state.kind = {} is not usable with the {} command", s.kind, self.command));
        }
        if self.command != Command::Figure && self.figure.is_some() {
            return Err("run.figure is only meaningful for the figure command".into());
        }
        if self.command == Command::Sequential {
            match self.detector.l2 {
                Some(l2) if l2 > self.detector.l => {}
                _ => return Err("detector.l2 must be set and lie beyond detector.l for the sequential command".into()),
            }
        }
        let g = &self.grid;
        for (lo, hi, n, name) in [(g.t_min, g.t_max, g.n, "grid.t"), (g.t2_min, g.t2_max, g.n2, "grid.t2")] {
            if n < 2 {
                return Err(format!("{name} grid needs at least two points"));
            }
            match (lo, hi) {
                (Some(a), Some(b)) if a.is_finite() && b.is_finite() && b > a => {}
                (None, None) => {}
                (Some(_), None) | (None, Some(_)) => return Err(format!("{name}_min and {name}_max must be given together")),
                _ => return Err(format!("{name}_max must exceed {name}_min")),
            }
        }
        if g.n_tau < 2 || g.n_k < 2 {
            return Err("grid.n_tau and grid.n_k must be at least 2".into());
        }
        if let Some(t) = g.tau_max {
            positive("grid.tau_max", t)?;
        }
        if let Some(t) = g.t_reduced {
            finite("grid.t_reduced", t)?;
        }
        let sp = &self.special;
        positive("special.epsilon", sp.epsilon)?;
        positive("special.cutoff", sp.cutoff)?;
        if !(sp.s_max > sp.s_min && sp.s_min.is_finite() && sp.s_max.is_finite()) || sp.n < 2 {
            return Err("special.s_min < special.s_max and special.n ≥ 2 required".into());
        }
        if self.units.si {
            positive("units.mass_kg", self.units.mass_kg)?;
            positive("units.sigma_x_m", self.units.sigma_x_m)?;
        }
        Ok(())
    }

    /// Every field as `section.key = value`, unset optional fields omitted.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("run.command", self.command.to_string());
        if let Some(f) = self.figure {
            line("run.figure", f.to_string());
        }
        let s = &self.state;
        line("state.kind", s.kind.to_string());
        line("state.x0", fmt_f64(s.x0));
        line("state.p0", fmt_f64(s.p0));
        line("state.sigma_x", fmt_f64(s.sigma_x));
        line("state.mass", fmt_f64(s.mass));
        line("state.x2", fmt_f64(s.x2));
        line("state.p2", fmt_f64(s.p2));
        line("state.c1", fmt_f64(s.c1));
        line("state.c2", fmt_f64(s.c2));
        line("state.phase", fmt_f64(s.phase));
        line("state.statistics", s.statistics.to_string());
        line("state.correlation", fmt_f64(s.correlation));
        if let Some(b) = s.back_time {
            line("state.back_time", fmt_f64(b));
        }
        line("state.beta", fmt_f64(s.beta));
        let d = &self.detector;
        line("detector.l", fmt_f64(d.l));
        if let Some(l2) = d.l2 {
            line("detector.l2", fmt_f64(l2));
        }
        line("detector.family", d.family.to_string());
        line("detector.smear", fmt_f64(d.smear));
        if !d.alpha.is_empty() {
            line(
                "detector.alpha",
                d.alpha.iter().map(|&(e, a)| format!("{}:{}", fmt_f64(e), fmt_f64(a))).collect::<Vec<_>>().join(", "),
            );
        }
        let g = &self.grid;
        let opt = [
            ("grid.t_min", g.t_min),
            ("grid.t_max", g.t_max),
            ("grid.t2_min", g.t2_min),
            ("grid.t2_max", g.t2_max),
            ("grid.t_reduced", g.t_reduced),
            ("grid.tau_max", g.tau_max),
        ];
        for (k, v) in opt {
            if let Some(v) = v {
                line(k, fmt_f64(v));
            }
        }
        line("grid.n", g.n.to_string());
        line("grid.n2", g.n2.to_string());
        line("grid.n_tau", g.n_tau.to_string());
        line("grid.n_k", g.n_k.to_string());
        let sp = &self.special;
        line("special.epsilon", fmt_f64(sp.epsilon));
        line("special.s_min", fmt_f64(sp.s_min));
        line("special.s_max", fmt_f64(sp.s_max));
        line("special.n", sp.n.to_string());
        line("special.cutoff", fmt_f64(sp.cutoff));
        line("units.si", self.units.si.to_string());
        line("units.mass_kg", fmt_f64(self.units.mass_kg));
        line("units.sigma_x_m", fmt_f64(self.units.sigma_x_m));
        if let Some(dir) = &self.output_dir {
            line("output.dir", dir.clone());
        }
        out
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.state;
        let g = &mut self.grid;
        match key {
            "run.command" | "run.figure" => {}
            "state.kind" => s.kind = v.parse()?,
            "state.x0" => s.x0 = real(v)?,
            "state.p0" => s.p0 = real(v)?,
            "state.sigma_x" => s.sigma_x = real(v)?,
            "state.mass" => s.mass = real(v)?,
            "state.x2" => s.x2 = real(v)?,
            "state.p2" => s.p2 = real(v)?,
            "state.c1" => s.c1 = real(v)?,
            "state.c2" => s.c2 = real(v)?,
            "state.phase" => s.phase = real(v)?,
            "state.statistics" => s.statistics = v.parse()?,
            "state.correlation" => s.correlation = real(v)?,
            "state.back_time" => s.back_time = Some(real(v)?),
            "state.beta" => s.beta = real(v)?,
            "detector.l" => self.detector.l = real(v)?,
            "detector.l2" => self.detector.l2 = Some(real(v)?),
            "detector.family" => self.detector.family = v.parse()?,
            "detector.smear" => self.detector.smear = real(v)?,
            "detector.alpha" => self.detector.alpha = alpha_table(v)?,
            "grid.t_min" => g.t_min = Some(real(v)?),
            "grid.t_max" => g.t_max = Some(real(v)?),
            "grid.n" => g.n = count(v)?,
            "grid.t2_min" => g.t2_min = Some(real(v)?),
            "grid.t2_max" => g.t2_max = Some(real(v)?),
            "grid.n2" => g.n2 = count(v)?,
            "grid.t_reduced" => g.t_reduced = Some(real(v)?),
            "grid.tau_max" => g.tau_max = Some(real(v)?),
            "grid.n_tau" => g.n_tau = count(v)?,
            "grid.n_k" => g.n_k = count(v)?,
            "special.epsilon" => self.special.epsilon = real(v)?,
            "special.s_min" => self.special.s_min = real(v)?,
            "special.s_max" => self.special.s_max = real(v)?,
            "special.n" => self.special.n = count(v)?,
            "special.cutoff" => self.special.cutoff = real(v)?,
            "units.si" => self.units.si = v.parse().map_err(|_| "expected true or false".to_string())?,
            "units.mass_kg" => self.units.mass_kg = real(v)?,
            "units.sigma_x_m" => self.units.sigma_x_m = real(v)?,
            "output.dir" => self.output_dir = Some(v.to_string()),
            _ => unreachable!("key table and setter disagree on {key}"),
        }
        Ok(())
    }
}

const KEYS: &[&str] = &[
    "run.command",
    "run.figure",
    "state.kind",
    "state.x0",
    "state.p0",
    "state.sigma_x",
    "state.mass",
    "state.x2",
    "state.p2",
    "state.c1",
    "state.c2",
    "state.phase",
    "state.statistics",
    "state.correlation",
    "state.back_time",
    "state.beta",
    "detector.l",
    "detector.l2",
    "detector.family",
    "detector.smear",
    "detector.alpha",
    "grid.t_min",
    "grid.t_max",
    "grid.n",
    "grid.t2_min",
    "grid.t2_max",
    "grid.n2",
    "grid.t_reduced",
    "grid.tau_max",
    "grid.n_tau",
    "grid.n_k",
    "special.epsilon",
    "special.s_min",
    "special.s_max",
    "special.n",
    "special.cutoff",
    "units.si",
    "units.mass_kg",
    "units.sigma_x_m",
    "output.dir",
];

fn real(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("`{v}` is not a number"))
}

fn count(v: &str) -> Result<usize, String> {
    v.parse::<usize>().map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn alpha_table(v: &str) -> Result<Vec<(f64, f64)>, String> {
    v.split(',')
        .map(|pair| {
            let (e, a) = pair.split_once(':').ok_or_else(|| format!("`{}` is not an energy:rate pair", pair.trim()))?;
            Ok((real(e.trim())?, real(a.trim())?))
        })
        .collect()
}

/// Shortest decimal that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses a configuration text. See [`parse_config_for`].
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_for(text, None, None)
}

/// Parses a configuration text; a command or figure from the command line
/// fills in `run.command` and `run.figure` and must agree with the text.
pub fn parse_config_for(text: &str, command: Option<Command>, figure: Option<Figure>) -> Result<RunConfig, ConfigError> {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: n, message: format!("expected `section.key = value`, found `{line}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line: n, message: format!("malformed key `{key}`") });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line: n, key: key.to_string() });
        }
        if let Some(&(first, _, _)) = entries.iter().find(|e| e.1 == key) {
            return Err(ConfigError::Syntax { line: n, message: format!("`{key}` already set on line {first}") });
        }
        if value.is_empty() {
            return Err(ConfigError::Syntax { line: n, message: format!("`{key}` has no value") });
        }
        entries.push((n, key, value));
    }
    let lookup = |key: &str| entries.iter().find(|e| e.1 == key).map(|e| (e.0, e.2));
    let resolve = |key: &str, given: Option<String>| -> Result<Option<(usize, String)>, ConfigError> {
        match (lookup(key), given) {
            (Some((n, v)), Some(g)) if v != g => Err(ConfigError::Invalid(format!(
                "line {n}: {key} = {v} conflicts with `{g}` on the command line"
            ))),
            (Some((n, v)), _) => Ok(Some((n, v.to_string()))),
            (None, g) => Ok(g.map(|g| (0, g))),
        }
    };
    let value_error = |n: usize, key: &str, message: String| ConfigError::Value { line: n, key: key.to_string(), message };
    let cmd = match resolve("run.command", command.map(|c| c.to_string()))? {
        Some((n, v)) => v.parse::<Command>().map_err(|e| value_error(n, "run.command", e))?,
        None => return Err(ConfigError::Invalid("run.command is not set".into())),
    };
    let fig = match resolve("run.figure", figure.map(|f| f.to_string()))? {
        Some((n, v)) => Some(v.parse::<Figure>().map_err(|e| value_error(n, "run.figure", e))?),
        None => None,
    };
    let mut cfg = RunConfig::defaults(cmd, fig);
    for &(n, key, value) in &entries {
        cfg.set(key, value).map_err(|e| value_error(n, key, e))?;
    }
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_has_a_setter() {
        let mut c = RunConfig::defaults(Command::Single, None);
        for key in KEYS {
            let v = match *key {
                "state.kind" => "packet",
                "state.statistics" => "boson",
                "detector.family" => "qtp",
                "detector.alpha" => "1:0.5",
                "units.si" => "false",
                "output.dir" => "out",
                k if k.ends_with(".n") || k.ends_with(".n2") || k.ends_with("n_tau") || k.ends_with("n_k") => "5",
                _ => "1.5",
            };
            c.set(key, v).unwrap();
        }
    }

    #[test]
    fn shortest_float_format() {
        for v in [0.1, 1e-20, 123456.789, -3.0, 1e300, 5e-324, 0.0, 2.5e-5] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1e-20), "1e-20");
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\nrun.command = single  # trailing\nstate.p0 = 12\n").unwrap();
        assert_eq!(c.state.p0, 12.0);
    }
}
