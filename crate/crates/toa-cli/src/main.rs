use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use toa_cli::{parse_config_for, run, Command, Figure};

#[derive(Parser)]
#[command(name = "toa", about = "Time-of-arrival densities, coincidences and figure datasets")]
struct Args {
    /// single, pair, sequential, witness, special or figure
    command: String,
    /// fig1 to fig4, for the figure command
    figure: Option<String>,
    /// Configuration file in `section.key = value` form
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("toa: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command: Command = match args.command.parse() {
        Ok(c) => c,
        Err(e) => return fail(2, format!("unknown command `{}`: {e}", args.command)),
    };
    let figure: Option<Figure> = match args.figure.as_deref().map(str::parse).transpose() {
        Ok(f) => f,
        Err(e) => return fail(2, format!("unknown figure: {e}")),
    };
    if command == Command::Figure && figure.is_none() {
        return fail(2, "the figure command needs one of fig1, fig2, fig3, fig4");
    }
    if command != Command::Figure && figure.is_some() {
        return fail(2, "only the figure command takes a figure name");
    }
    if let Ok(v) = std::env::var("TOA_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return fail(1, e);
                }
            }
            _ => return fail(2, format!("TOA_THREADS must be a positive integer, got `{v}`")),
        }
    }
    let text = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(2, format!("{}: {e}", path.display())),
        },
        None => String::new(),
    };
    let cfg = match parse_config_for(&text, Some(command), figure) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    let out = args.out.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    match run(&cfg, &out) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code() as u8, e),
    }
}
