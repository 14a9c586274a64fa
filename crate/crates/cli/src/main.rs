//! `blowup`: run one scenario, or a parallel sweep over one parameter.

mod config;
mod output;
mod scenarios;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use rayon::prelude::*;
use serde_json::{json, Map, Value as Json};

use config::{parse_args, parse_file, ConfigError, Params};
use scenarios::{RunError, SCENARIOS};

#[derive(Parser, Debug)]
#[command(
    name = "blowup",
    version,
    about = "Continue numerical solutions through finite-time blowup"
)]
struct Cli {
    /// Scenario name; may instead be given as `scenario = ...` in the config file.
    scenario: Option<String>,
    /// Flat key=value config file; command-line parameters override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; artifacts go to `<out>/<scenario>/`.
    #[arg(long, env = "BLOWUP_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Run the scenario once per value, in parallel: `key=v1,v2,...`.
    #[arg(long)]
    sweep: Option<String>,
    /// List scenarios and their parameters, then exit.
    #[arg(long)]
    list: bool,
    /// Scenario parameters: `--key value`, `--key=value` or `key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    params: Vec<String>,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

struct Job {
    scenario: String,
    params: Params,
    dir: PathBuf,
}

struct Setup {
    jobs: Vec<Job>,
}

fn setup(cli: Cli) -> Result<Setup, ConfigError> {
    let mut scenario = cli.scenario;
    let mut args = cli.params;
    if scenario
        .as_deref()
        .is_some_and(|s| s.contains('=') || s.starts_with("--"))
    {
        args.insert(0, scenario.take().unwrap_or_default());
    }
    let mut pairs = Vec::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        pairs.extend(parse_file(&text)?);
    }
    pairs.extend(parse_args(&args)?);

    let (mut out, mut sweep) = (cli.out, cli.sweep);
    let mut overrides = Vec::new();
    for (k, v) in pairs {
        match k.as_str() {
            "scenario" => scenario = Some(v),
            "out" => out = PathBuf::from(v),
            "sweep" => sweep = Some(v),
            _ => overrides.push((k, v)),
        }
    }
    let Some(scenario) = scenario else {
        return Err(ConfigError(format!(
            "no scenario given (one of {})",
            SCENARIOS.join(", ")
        )));
    };
    let Some(specs) = scenarios::specs(&scenario) else {
        return Err(ConfigError(format!(
            "unknown scenario '{scenario}' (one of {})",
            SCENARIOS.join(", ")
        )));
    };
    let base = out.join(&scenario);
    let jobs = match sweep {
        None => vec![Job {
            params: Params::resolve(specs, &overrides)?,
            scenario,
            dir: base,
        }],
        Some(s) => {
            let Some((key, values)) = s.split_once('=') else {
                return Err(ConfigError(format!(
                    "--sweep expects key=v1,v2,..., got '{s}'"
                )));
            };
            let key = key.trim().replace('-', "_");
            let mut jobs = Vec::new();
            for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let mut o = overrides.clone();
                o.push((key.clone(), v.to_string()));
                jobs.push(Job {
                    params: Params::resolve(specs, &o)?,
                    scenario: scenario.clone(),
                    dir: base.join(format!("{key}={v}")),
                });
            }
            if jobs.is_empty() {
                return Err(ConfigError("--sweep lists no values".into()));
            }
            jobs
        }
    };
    Ok(Setup { jobs })
}

fn write(dir: &Path, name: &str, text: &str) -> std::io::Result<()> {
    fs::write(dir.join(name), text)
}

fn parameters_json(params: &Params) -> Json {
    serde_json::to_value(params.values()).expect("parameters serialize")
}

/// Runs one job and returns its exit code.
fn execute(job: &Job) -> u8 {
    let report = |code: u8, msg: String| {
        eprintln!("{}: {msg}", job.dir.display());
        code
    };
    if let Err(e) = fs::create_dir_all(&job.dir) {
        return report(EXIT_CONFIG, format!("cannot create output directory: {e}"));
    }
    match scenarios::run(&job.scenario, &job.params) {
        Ok(outcome) => {
            let mut files: Vec<&str> = Vec::new();
            for (name, text) in &outcome.files {
                if let Err(e) = write(&job.dir, name, text) {
                    return report(EXIT_CONFIG, format!("cannot write {name}: {e}"));
                }
                files.push(name);
            }
            files.sort_unstable();
            let passed = outcome.checks.values().all(|&c| c);
            let summary = json!({
                "scenario": job.scenario,
                "parameters": parameters_json(&job.params),
                "results": Json::Object(outcome.results),
                "checks": outcome.checks,
                "passed": passed,
                "files": files,
            });
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
            if let Err(e) = write(&job.dir, "summary.json", &text) {
                return report(EXIT_CONFIG, format!("cannot write summary.json: {e}"));
            }
            let failed: Vec<&String> = outcome
                .checks
                .iter()
                .filter(|(_, &c)| !c)
                .map(|(k, _)| k)
                .collect();
            if failed.is_empty() {
                println!("{}: ok", job.dir.display());
                0
            } else {
                report(EXIT_CHECK_FAILED, format!("failed checks: {failed:?}"))
            }
        }
        Err(RunError::Config(e)) => report(EXIT_CONFIG, format!("config error: {e}")),
        Err(RunError::Numerical { kind, message }) => {
            let mut error = Map::new();
            error.insert("kind".into(), kind.clone().into());
            error.insert("message".into(), message.clone().into());
            let diag = json!({
                "scenario": job.scenario,
                "parameters": parameters_json(&job.params),
                "error": error,
            });
            let text = serde_json::to_string_pretty(&diag).expect("diagnostic serializes") + "\n";
            let _ = write(&job.dir, "diagnostic.json", &text);
            report(
                EXIT_NUMERICAL,
                format!("numerical failure ({kind}): {message}"),
            )
        }
    }
}

fn list() -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for name in SCENARIOS {
        writeln!(out, "{name}")?;
        for s in scenarios::specs(name).unwrap_or(&[]) {
            writeln!(out, "    {:<18} {:<14} {}", s.key, s.default, s.help)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        // A closed pipe (`blowup --list | head`) is not an error.
        let _ = list();
        return ExitCode::SUCCESS;
    }
    let setup = match setup(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let codes: Vec<u8> = setup.jobs.par_iter().map(execute).collect();
    // Numerical failures dominate config errors, which dominate failed checks.
    let worst = codes
        .iter()
        .copied()
        .max_by_key(|c| match *c {
            EXIT_NUMERICAL => 3,
            EXIT_CONFIG => 2,
            EXIT_CHECK_FAILED => 1,
            _ => 0,
        })
        .unwrap_or(0);
    ExitCode::from(worst)
}
