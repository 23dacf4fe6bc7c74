use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use ergodic_lab::config::{parse_assignment, parse_key_values};
use ergodic_lab::{list_experiments, registry, run, ExperimentConfig, HarnessError};

fn run_args(cmd: Command) -> Command {
    cmd.arg(Arg::new("config").long("config").value_name("FILE").value_parser(value_parser!(PathBuf)).help("key=value parameter file"))
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .value_parser(|s: &str| parse_assignment(s))
                .help("override one parameter; repeatable, applied after --config"),
        )
        .arg(Arg::new("seed").long("seed").default_value("1").value_parser(value_parser!(u64)).help("master seed"))
        .arg(Arg::new("replicas").long("replicas").value_parser(value_parser!(usize)).help("replica count (default per experiment)"))
        .arg(Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf)).help("write CSV tables and a JSON summary here"))
        .arg(
            Arg::new("format")
                .long("format")
                .default_value("csv")
                .value_parser(["csv", "json"])
                .help("stdout format when --out is not given"),
        )
}

fn cli() -> Command {
    let mut cmd = Command::new("ergodic-lab")
        .about("Monte Carlo and numerical experiments on long-time behaviour of Markov processes")
        .subcommand_required(true)
        .subcommand(Command::new("list").about("list experiments as JSON"));
    for e in registry() {
        let mut about = format!("{}\n\nParameters:", e.claim);
        for p in (e.params)() {
            let default = p.default.as_deref().map_or("required".to_string(), |d| format!("default {d}"));
            about.push_str(&format!("\n  {} ({default}): {}", p.key, p.help));
        }
        cmd = cmd.subcommand(run_args(Command::new(e.name).about(e.claim).long_about(about)));
    }
    cmd
}

fn config_from(name: &str, m: &ArgMatches) -> Result<ExperimentConfig, HarnessError> {
    let mut overrides = BTreeMap::new();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        overrides = parse_key_values(&text)?;
    }
    for (k, v) in m.get_many::<(String, String)>("set").into_iter().flatten() {
        overrides.insert(k.clone(), v.clone());
    }
    Ok(ExperimentConfig {
        experiment: name.into(),
        overrides,
        seed: *m.get_one::<u64>("seed").expect("defaulted"),
        replicas: m.get_one::<usize>("replicas").copied(),
        out: m.get_one::<PathBuf>("out").cloned(),
    })
}

fn execute(name: &str, m: &ArgMatches) -> Result<bool, HarnessError> {
    let config = config_from(name, m)?;
    let report = run(&config)?;
    let mut stdout = std::io::stdout().lock();
    if config.out.is_none() {
        if m.get_one::<String>("format").map(String::as_str) == Some("json") {
            writeln!(stdout, "{}", report.to_json())?;
        } else {
            for t in &report.tables {
                writeln!(stdout, "# {}", t.name)?;
                t.write_csv(&mut stdout)?;
            }
        }
    }
    for c in &report.checks {
        eprintln!("{}", c.describe());
    }
    eprintln!("{}: {} in {:.2}s", report.config.experiment, if report.passed() { "PASS" } else { "FAIL" }, report.duration_secs);
    Ok(report.passed())
}

fn set_threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var("ERGODIC_LAB_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| HarnessError::Config(format!("ERGODIC_LAB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| HarnessError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = set_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let (name, sub) = matches.subcommand().expect("subcommand required");
    if name == "list" {
        println!("{}", serde_json::to_string_pretty(&list_experiments()).expect("listing serializes"));
        return ExitCode::SUCCESS;
    }
    match execute(name, sub) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
