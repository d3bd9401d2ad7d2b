//! `weakflow` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! contract violated (cancellation beyond the working precision, an
//! unconverged split step, a zero norm).

mod commands;
mod params;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::{json, Value};

use params::{Params, SCHEMAS};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "invalid input: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<weakflow::Error> for Failure {
    fn from(e: weakflow::Error) -> Self {
        use weakflow::Error as E;
        match e {
            E::InvalidParameter(_) | E::ZeroOverlap | E::GridTooCoarse { .. } | E::SubluminalInput(_) => {
                Failure::Usage(e.to_string())
            }
            E::ZeroNorm
            | E::OnWorldline
            | E::UndefinedRegion
            | E::SplitStepUnconverged { .. }
            | E::Cancellation { .. } => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn cli() -> Command {
    let mut cmd = Command::new("weakflow")
        .about("Pre/postselected spin walk: weak-velocity displacement, Cherenkov potentials, kick experiment")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("config").long("config").global(true).value_name("FILE").help("key = value parameter file"))
        .arg(Arg::new("out").long("out").global(true).value_name("DIR").help("output directory [default: weakflow-out/<subcommand>]"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads [default: WEAKFLOW_THREADS or all cores]"),
        )
        .arg(
            Arg::new("dry-run")
                .long("dry-run")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("validate and print the resolved parameters without computing"),
        )
        .arg(Arg::new("no-plot").long("no-plot").global(true).action(ArgAction::SetTrue).help("skip gnuplot scripts"));
    for s in SCHEMAS {
        let mut sub = Command::new(s.name).about(s.about);
        for p in s.params {
            sub = sub.arg(
                Arg::new(p.name)
                    .long(p.name)
                    .value_name("VALUE")
                    .allow_negative_numbers(true)
                    .help(format!("{} [default: {}]", p.help, p.default)),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn threads(m: &ArgMatches) -> Result<Option<usize>, Failure> {
    if let Some(n) = m.get_one::<usize>("threads") {
        return Ok(Some(*n));
    }
    match std::env::var("WEAKFLOW_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("WEAKFLOW_THREADS must be an integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(m: &ArgMatches) -> Result<(), Failure> {
    let start = Instant::now();
    let (name, sub) = m.subcommand().expect("subcommand required");
    let schema = params::schema(name).expect("subcommands come from the schemas");
    let config = match sub.get_one::<String>("config") {
        Some(path) => params::parse_config(
            &std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {path}: {e}")))?,
        )?,
        None => BTreeMap::new(),
    };
    let flags: BTreeMap<&'static str, String> =
        schema.params.iter().filter_map(|p| sub.get_one::<String>(p.name).map(|v| (p.name, v.clone()))).collect();
    let params = Params::resolve(schema, &flags, &config)?;
    commands::validate(&params)?;
    let out_dir: PathBuf = sub
        .get_one::<String>("out")
        .or_else(|| config.get("out"))
        .map_or_else(|| PathBuf::from("weakflow-out").join(name), PathBuf::from);

    if sub.get_flag("dry-run") {
        let line = json!({
            "subcommand": name,
            "params_digest": params.digest(),
            "key_results": { "dry_run": true, "params": params.to_json(), "out": out_dir.display().to_string() },
            "wall_time": 0.0,
        });
        println!("{line}");
        return Ok(());
    }

    if let Some(n) = threads(sub)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }

    let outcome = commands::run(&params)?;
    let key_results = Value::Object(outcome.key_results);
    std::fs::create_dir_all(&out_dir)?;
    let no_plot = sub.get_flag("no-plot");
    for (file, bytes) in &outcome.files {
        if no_plot && file.ends_with(".gp") {
            continue;
        }
        std::fs::write(out_dir.join(file), bytes)?;
    }
    std::fs::write(out_dir.join("params.conf"), params.to_config())?;
    let record = json!({ "subcommand": name, "params_digest": params.digest(), "key_results": key_results });
    std::fs::write(out_dir.join("summary.json"), format!("{record}\n"))?;

    let line = json!({
        "subcommand": name,
        "params_digest": params.digest(),
        "key_results": key_results,
        "wall_time": start.elapsed().as_secs_f64(),
    });
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("weakflow: {f}");
            ExitCode::from(f.code())
        }
    }
}
