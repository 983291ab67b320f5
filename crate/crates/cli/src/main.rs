use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trustbridge_core::chain::{entity_from_ledger, parse_ledger};
use trustbridge_core::environment::Scenario;
use trustbridge_core::sim::{self, RunConfig, Trace};
use trustbridge_core::verifier::{self, Summary, TimingParams};

#[derive(Parser)]
#[command(name = "trustbridge", version, about = "Simulate and audit TEE sensor records anchored on a blockchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.jsonl and ledger.jsonl.
    Run {
        /// Scenario directory holding scenario.toml and config.toml.
        dir: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Audit the entity recorded in a trace.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        /// Timing parameters (TOML); defaults to those implied by the run config.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Audit this ledger export instead of the blocks in the trace.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Latency statistics and plot-ready series.
    Stats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        series: Option<Series>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Temp,
    Lux,
    Gps,
    Latency,
}

/// Failure with its exit code.
struct Fail(u8, String);

fn usage(msg: impl Into<String>) -> Fail {
    Fail(2, msg.into())
}

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_trace(path: &Path) -> Result<Trace, Fail> {
    Trace::from_jsonl(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn resolve_inputs(
    dir: Option<PathBuf>,
    scenario: Option<PathBuf>,
    config: Option<PathBuf>,
) -> Result<(PathBuf, PathBuf), Fail> {
    let base = dir.as_deref();
    let pick = |explicit: Option<PathBuf>, name: &str| -> Result<PathBuf, Fail> {
        if let Some(p) = explicit {
            return Ok(p);
        }
        match base {
            Some(d) if d.is_dir() => Ok(d.join(name)),
            Some(d) => Err(usage(format!("{} is not a scenario directory", d.display()))),
            None => Err(usage(format!("no {name} given; pass a scenario directory or --{}", &name[..name.len() - 5]))),
        }
    };
    Ok((pick(scenario, "scenario.toml")?, pick(config, "config.toml")?))
}

fn cmd_run(
    dir: Option<PathBuf>,
    scenario: Option<PathBuf>,
    config: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
) -> Result<(), Fail> {
    let (scenario_path, config_path) = resolve_inputs(dir, scenario, config)?;
    let scenario = Scenario::from_toml(&read(&scenario_path)?)
        .map_err(|e| usage(format!("{}: {e}", scenario_path.display())))?;
    let config =
        RunConfig::from_toml(&read(&config_path)?).map_err(|e| usage(format!("{}: {e}", config_path.display())))?;
    let trace = sim::run(&scenario, &config, seed).map_err(|e| usage(e.to_string()))?;

    fs::create_dir_all(&out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    };
    write("trace.jsonl", trace.to_jsonl())?;
    write("ledger.jsonl", trace.ledger_export())?;
    println!("{}", trace.summary());
    if let trustbridge_core::device::DeviceStatus::Failed(reason) = &trace.footer.status {
        println!("device failed: {reason}");
    }
    Ok(())
}

fn cmd_audit(trace: PathBuf, params: Option<PathBuf>, ledger: Option<PathBuf>, json: bool) -> Result<(), Fail> {
    let trace = load_trace(&trace)?;
    let params = match params {
        Some(p) => TimingParams::from_toml(&read(&p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => trace.timing_params(),
    };
    let entity = match ledger {
        Some(path) => {
            let lines = parse_ledger(&read(&path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            entity_from_ledger(&lines, &trace.header.device_id)
        }
        None => trace.entity(),
    };
    let report = verifier::audit(&entity, &trace.header.device_pk, &params).map_err(|e| usage(e.to_string()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
    } else {
        print!("{}", report.render());
    }
    if report.trustworthy() {
        Ok(())
    } else {
        Err(Fail(1, String::new()))
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.3}")
    }
}

fn stat_line(name: &str, s: Option<Summary>) -> String {
    match s {
        Some(s) => format!(
            "{name}: mean {} ms, var {} ms^2, min {} ms, max {} ms (n={})",
            fmt_num(s.mean),
            fmt_num(s.variance),
            fmt_num(s.min),
            fmt_num(s.max),
            s.count
        ),
        None => format!("{name}: no samples"),
    }
}

fn cmd_stats(trace: PathBuf, series: Option<Series>, json: bool) -> Result<(), Fail> {
    let trace = load_trace(&trace)?;
    let entity = trace.entity();
    if entity.is_empty() {
        return Err(usage("trace has no committed records"));
    }
    let Some(series) = series else {
        let stats = trace.stats();
        if json {
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
        } else {
            println!("{}", stat_line("eps1", stats.eps1));
            println!("{}", stat_line("eps2", stats.eps2));
            println!("{}", stat_line("eps3", stats.eps3));
            match stats.max_latency_ms {
                Some(m) => println!("max T-t: {} ms", fmt_num(m)),
                None => println!("max T-t: n/a"),
            }
        }
        return Ok(());
    };
    let life = |t: u64| trace.lifecycles.iter().find(|lc| lc.t == t);
    let header = match series {
        Series::Temp => "t_ms\ttemperature_c\trecovered",
        Series::Lux => "t_ms\tlight\trecovered",
        Series::Gps => "t_ms\tlat\tlon\trecovered",
        Series::Latency => "t_ms\teps1_ms\teps2_ms\teps3_ms\tlatency_ms\trecovered",
    };
    println!("{header}");
    for c in &entity.records {
        let r = &c.record;
        let lc = life(r.t);
        let recovered = u8::from(lc.is_some_and(|lc| lc.recovered));
        let row = match series {
            Series::Temp => format!("{}\t{}\t{recovered}", r.t, r.reading.temperature_c),
            Series::Lux => format!("{}\t{}\t{recovered}", r.t, r.reading.light.bit()),
            Series::Gps => format!("{}\t{}\t{}\t{recovered}", r.t, r.reading.lat, r.reading.lon),
            Series::Latency => {
                let span = |a: Option<trustbridge_core::SimTime>, b: Option<trustbridge_core::SimTime>| match (a, b) {
                    (Some(a), Some(b)) => format!("{:.3}", b.ms_since(a)),
                    _ => "-".into(),
                };
                let (e1, e2, e3) = match lc {
                    Some(lc) => (span(Some(lc.sense), lc.send), span(lc.send, lc.arrival), span(lc.arrival, lc.commit)),
                    None => ("-".into(), "-".into(), "-".into()),
                };
                let latency = (c.commit.micros() as i64 - r.t as i64 * 1_000) as f64 / 1_000.0;
                format!("{}\t{e1}\t{e2}\t{e3}\t{latency:.3}\t{recovered}", r.t)
            }
        };
        println!("{row}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { dir, scenario, config, seed, out } => cmd_run(dir, scenario, config, seed, out),
        Command::Audit { trace, params, ledger, json } => cmd_audit(trace, params, ledger, json),
        Command::Stats { trace, series, json } => cmd_stats(trace, series, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
