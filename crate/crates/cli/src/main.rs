//! `bktrg` command-line front end.

mod commands;
mod config;
mod golden;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

use config::{RunConfig, KEYS};
use golden::Outcome;

const COMMANDS: &[(&str, &str)] = &[
    ("potential", "lattice Coulomb/Yukawa potential window (CSV)"),
    ("covariance", "continuum kernels Γ_j(r) per scale (CSV)"),
    ("coeffs", "per-scale flow coefficients (CSV)"),
    ("separatrix", "separatrix shooting: s(z) and β_BKT(z) (JSON)"),
    ("flow", "coupling flow from (s0, z) (CSV)"),
    ("charge-flow", "charge constants Z, Z̄ on the separatrix (CSV)"),
    ("correlation", "fractional-charge correlation profile (CSV) or fit (JSON)"),
    ("phase-diagram", "Kosterlitz ODE orbits on a grid of initial data (CSV)"),
    ("oracle", "enumeration, Wick and Monte Carlo cross-checks (JSON)"),
    ("verify-all", "run the acceptance suite and write a pass/fail summary (JSON)"),
];

const EXIT_ERROR: u8 = 1;
const EXIT_GOLDEN: u8 = 3;
const EXIT_CRITERIA: u8 = 4;

fn cli() -> Command {
    let mut cmd = Command::new("bktrg")
        .version(bktrg::CODE_VERSION)
        .about("Renormalization-group numerics for the 2D Coulomb gas at the BKT transition")
        .arg_required_else_help(true)
        .subcommand_required(true)
        .after_help("Exit status: 0 success, 1 error (JSON on stderr), 2 usage, 3 golden mismatch, 4 failing criteria.")
        .arg(Arg::new("config").long("config").global(true).env("BKTRG_CONFIG").help("flat key = value config file"))
        .arg(Arg::new("out").long("out").global(true).env("BKTRG_OUT").help("output directory (default: stdout)"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .env("BKTRG_THREADS")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads (default: all cores)"),
        )
        .arg(
            Arg::new("golden")
                .long("golden")
                .global(true)
                .env("BKTRG_GOLDEN")
                .default_value("golden/registry.json")
                .help("golden-value registry"),
        )
        .arg(
            Arg::new("bless")
                .long("bless")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("record this output as golden"),
        );
    for (key, default, help) in KEYS {
        let env: &'static str = Box::leak(format!("BKTRG_{}", key.to_uppercase()).into_boxed_str());
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .global(true)
                .env(env)
                .allow_negative_numbers(true)
                .help(format!("{help} [default: {default}]")),
        );
    }
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn from_error(kind: &'static str, e: anyhow::Error) -> Self {
        let kind = e.downcast_ref::<bktrg::Error>().map(bktrg::Error::kind).unwrap_or(kind);
        Failure { kind, message: format!("{e:#}"), code: EXIT_ERROR }
    }
}

fn overrides(m: &ArgMatches) -> BTreeMap<String, String> {
    KEYS.iter().filter_map(|(k, ..)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone()))).collect()
}

fn execute(name: &str, m: &ArgMatches) -> Result<u8, Failure> {
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Failure::from_error("io", anyhow::anyhow!("reading {p}: {e}")))?;
            config::parse_file(&text).map_err(|e| Failure::from_error("config", e))?
        }
        None => BTreeMap::new(),
    };
    let out = m.get_one::<String>("out").map(PathBuf::from);
    let cfg = RunConfig::resolve(name, file, overrides(m), out).map_err(|e| Failure::from_error("config", e))?;
    if let Some(&n) = m.get_one::<usize>("threads") {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::from_error("config", e.into()))?;
    }
    let (artifact, all_pass) = commands::run(&cfg).map_err(|e| Failure::from_error("run", e))?;

    let registry = PathBuf::from(m.get_one::<String>("golden").expect("has default"));
    match golden::check(&registry, &cfg, &artifact.body, m.get_flag("bless"))
        .map_err(|e| Failure::from_error("io", e))?
    {
        Outcome::Mismatch { expected, actual } => {
            return Err(Failure {
                kind: "golden",
                message: format!("output hash {actual} differs from golden {expected} in {}", registry.display()),
                code: EXIT_GOLDEN,
            })
        }
        Outcome::Blessed => eprintln!("blessed {name} in {}", registry.display()),
        Outcome::Match | Outcome::Absent => {}
    }

    match &cfg.out {
        Some(dir) => {
            let path = dir.join(format!("{}.{}", name.replace('-', "_"), artifact.ext));
            fs::create_dir_all(dir)
                .and_then(|_| fs::write(&path, &artifact.body))
                .map_err(|e| Failure::from_error("io", anyhow::anyhow!("writing {}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", artifact.body),
    }
    Ok(if all_pass { 0 } else { EXIT_CRITERIA })
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match execute(name, sub) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let body = json!({ "error": { "kind": f.kind, "message": f.message }, "command": name });
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_default());
            ExitCode::from(f.code)
        }
    }
}
