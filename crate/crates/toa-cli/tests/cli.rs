use proptest::prelude::*;
use std::path::PathBuf;
use std::process::Command as Process;
use toa_cli::config::{Family, StateKind, Stats};
use toa_cli::{parse_config, parse_config_for, Command, ConfigError, Figure, RunConfig};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("toa-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_toa"))
}

#[test]
fn minimal_single_config_gets_defaults() {
    let c = parse_config("run.command = single\n").unwrap();
    assert_eq!(c, RunConfig::defaults(Command::Single, None));
    assert_eq!(c.state.kind, StateKind::Packet);
    assert_eq!(c.detector.family, Family::Qtp);
    assert!(c.grid.t_min.is_none());
}

#[test]
fn misspelled_key_names_key_and_line() {
    let err = parse_config("run.command = single\n# comment\nstate.p00 = 3\n").unwrap_err();
    match &err {
        ConfigError::UnknownKey { line, key } => {
            assert_eq!(*line, 3);
            assert_eq!(key, "state.p00");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(err.to_string(), "line 3: unknown key `state.p00`");
}

#[test]
fn syntax_and_value_errors_carry_line_numbers() {
    let e = parse_config("run.command = single\nstate.p0 12\n").unwrap_err();
    assert!(matches!(e, ConfigError::Syntax { line: 2, .. }), "{e}");
    let e = parse_config("run.command = single\nstate.p0 = twelve\n").unwrap_err();
    assert!(matches!(e, ConfigError::Value { line: 2, .. }), "{e}");
    let e = parse_config("run.command = single\nstate.p0 = 1\nstate.p0 = 2\n").unwrap_err();
    assert!(e.to_string().contains("already set on line 2"), "{e}");
    let e = parse_config("run.command = single\ndetector.family = bohm\n").unwrap_err();
    assert!(e.to_string().contains("qtp, kijowski, current"), "{e}");
}

#[test]
fn validation_names_the_guard() {
    let e = parse_config("run.command = single\nstate.mass = -1\n").unwrap_err();
    assert!(e.to_string().contains("state.mass"), "{e}");
    let e = parse_config("run.command = sequential\ndetector.l2 = 5\n").unwrap_err();
    assert!(e.to_string().contains("detector.l2"), "{e}");
    let e = parse_config("run.command = pair\nstate.kind = thermal\n").unwrap_err();
    assert!(e.to_string().contains("not usable"), "{e}");
    let e = parse_config("run.command = single\ngrid.t_min = 1\n").unwrap_err();
    assert!(e.to_string().contains("together"), "{e}");
    assert!(parse_config("run.command = figure\n").is_err());
    assert!(parse_config("state.p0 = 3\n").is_err());
}

#[test]
fn figure_config_carries_caption_parameters() {
    let c = parse_config("run.command = figure\nrun.figure = fig1\n").unwrap();
    assert_eq!(c.detector.l / c.state.sigma_x, 1000.0);
    assert_eq!(c.state.p0 * c.state.sigma_x, 100.0);
    assert_eq!(c.state.p2 * c.state.sigma_x, 110.0);
    assert_eq!(c.state.statistics, Stats::Boson);
    // equal mean arrival times m(L − xᵢ)/pᵢ
    let tbar = |x: f64, p: f64| c.state.mass * (c.detector.l - x) / p;
    assert_eq!(tbar(c.state.x0, c.state.p0), tbar(c.state.x2, c.state.p2));
    let c2 = parse_config_for("", Some(Command::Figure), Some(Figure::Fig2)).unwrap();
    assert_eq!(c2.state.p2, 102.0);
    assert_eq!(c2.state.statistics, Stats::Fermion);
    // explicit keys override figure defaults
    let c3 = parse_config_for("state.p2 = 104\n", Some(Command::Figure), Some(Figure::Fig3)).unwrap();
    assert_eq!(c3.state.p2, 104.0);
    assert!(parse_config_for("run.command = pair\n", Some(Command::Single), None).is_err());
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    let commands = prop_oneof![
        Just((Command::Single, None)),
        Just((Command::Pair, None)),
        Just((Command::Witness, None)),
        Just((Command::Special, None)),
        Just((Command::Figure, Some(Figure::Fig1))),
        Just((Command::Figure, Some(Figure::Fig4))),
    ];
    let reals = prop::collection::vec(-1e3f64..1e3, 6);
    let positive = prop::collection::vec(1e-6f64..1e6, 4);
    (commands, reals, positive, prop::option::of(0.0f64..50.0), 2usize..5000, any::<bool>(), prop::collection::vec((0.0f64..10.0, 0.0f64..3.0), 0..4))
        .prop_map(|((cmd, fig), r, p, tmin, n, si, alpha)| {
            let mut c = RunConfig::defaults(cmd, fig);
            c.state.x0 = r[0];
            c.state.x2 = r[1];
            c.state.phase = r[2];
            c.state.c1 = r[3];
            c.state.c2 = r[4] + 1e4;
            c.detector.l = r[5];
            c.state.sigma_x = p[0];
            c.state.mass = p[1];
            c.special.epsilon = p[2];
            c.special.cutoff = p[3];
            if let Some(t) = tmin {
                c.grid.t_min = Some(t);
                c.grid.t_max = Some(t + 1.0 / 3.0);
            }
            c.grid.n = n;
            c.units.si = si;
            let mut e = 0.0;
            c.detector.alpha = alpha
                .into_iter()
                .map(|(de, a)| {
                    e += de + 1e-3;
                    (e, a)
                })
                .collect();
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn serialize_then_parse_is_identity(c in arb_config()) {
        let text = c.serialize();
        let back = parse_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, c);
    }
}

fn run_to(dir: &PathBuf, args: &[&str], config: &str) -> std::process::Output {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, config).unwrap();
    binary().args(args).arg("--config").arg(&cfg).arg("--out").arg(dir).output().unwrap()
}

#[test]
fn same_config_gives_identical_bytes() {
    let config = "grid.n = 201\n";
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    for dir in [&a, &b] {
        let out = run_to(dir, &["single"], config);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["density.csv", "summary.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let text = std::fs::read_to_string(a.join("density.csv")).unwrap();
    assert!(text.starts_with("t,density\n"));
    for line in text.lines().skip(1) {
        for cell in line.split(',') {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(toa_cli::config::fmt_f64(v), cell);
        }
    }
}

#[test]
fn exit_codes() {
    let dir = scratch("exit");
    let out = run_to(&dir, &["single"], "state.p00 = 3\n");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1: unknown key `state.p00`"));
    // a time grid far too coarse for the packet's energy spread trips a numerical guard
    let out = run_to(&dir, &["single"], "grid.n = 3\ngrid.t_min = 0.5\ngrid.t_max = 6\n");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("too coarse"));
    let out = binary().args(["figure", "fig9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = binary().args(["special", "--out"]).arg(&dir).env("TOA_THREADS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = binary().args(["special", "--out"]).arg(&dir).env("TOA_THREADS", "1").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn commands_write_their_tables() {
    let cases: [(&[&str], &str, &[(&str, &str)]); 5] = [
        (&["pair"], "grid.n = 121\ngrid.n2 = 121\n", &[("surface.csv", "t1,t2,density"), ("coincidence.csv", "t,c2")]),
        (&["witness"], "", &[("witness.csv", "quantity,value")]),
        (&["sequential"], "grid.n = 13\ngrid.n2 = 121\ngrid.n_k = 8\n", &[("reduced_state.csv", "k,k2,re,im"), ("tof.csv", "tau,density")]),
        (&["special"], "special.n = 11\n", &[("zeta.csv", "s,zeta"), ("moments.csv", "n,exact,pairing")]),
        (&["figure", "fig4"], "", &[("fig4.csv", "s,zeta")]),
    ];
    for (i, (args, config, files)) in cases.iter().enumerate() {
        let dir = scratch(&format!("cmd{i}"));
        let out = run_to(&dir, args, config);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        for (f, header) in *files {
            let text = std::fs::read_to_string(dir.join(f)).unwrap();
            assert_eq!(text.lines().next(), Some(*header), "{f}");
            assert!(text.lines().count() > 2, "{f}");
        }
    }
}

#[test]
fn thermal_single_with_si_units() {
    let dir = scratch("thermal");
    let out = run_to(&dir, &["single"], "state.kind = thermal\nstate.beta = 400\ndetector.l = 20\ngrid.n = 601\nunits.si = true\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    for key in ["nu,1\n", "tau,400\n", "tau_s,", "time_unit_s,"] {
        assert!(s.contains(key), "{key} missing from\n{s}");
    }
}
