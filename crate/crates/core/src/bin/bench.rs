use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use healbind::bench::{run_scenario, MetricsReport, Scenario, ScenarioConfig, Setting};
use healbind::stub::Strategy;

/// Run a binding-repair scenario and report reconfiguration timings.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
struct Args {
    #[arg(long, value_parser = parse::<Scenario>)]
    scenario: Scenario,
    #[arg(long, value_parser = parse::<Setting>, default_value = "local")]
    setting: Setting,
    /// One-way latency injected per message in distributed_sim.
    #[arg(long = "latency-ms")]
    latency_ms: Option<u64>,
    #[arg(long, default_value_t = healbind::bench::DEFAULT_TRIALS)]
    trials: u32,
    #[arg(long, value_parser = parse::<Strategy>, default_value = "virtual_stub_repair")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Calls per strategy in strategy_compare.
    #[arg(long, default_value_t = healbind::bench::DEFAULT_CALLS)]
    calls: u32,
    /// Policy file for follow_me.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Where to write the per-trial CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn print_summary(report: &MetricsReport) {
    println!(
        "scenario={} setting={} strategy={} trials={} repairs={} aborted={}",
        report.scenario,
        report.setting,
        report.strategy,
        report.trials,
        report.rows.len(),
        report.aborted_trials
    );
    if !report.rows.is_empty() {
        for (name, s) in [
            ("lookup_us", report.lookup_us),
            ("cache_us", report.cache_us),
            ("retry_us", report.retry_us),
            ("total_us", report.total_us),
        ] {
            println!("{name:>10}: mean {:>10.1}  sd {:>10.1}", s.mean, s.std_dev);
        }
    }
    if report.healthy_call_us.n > 0 {
        let h = report.healthy_call_us;
        println!("healthy call: mean {:.1}us sd {:.1}us", h.mean, h.std_dev);
    }
    if !report.strategies.is_empty() {
        println!(
            "{:<20} {:>6} {:>8} {:>8} {:>9} {:>6} {:>7}",
            "strategy", "calls", "lookups", "invokes", "messages", "hops", "failed"
        );
        for c in &report.strategies {
            println!(
                "{:<20} {:>6} {:>8} {:>8} {:>9} {:>6} {:>7}",
                c.strategy.as_str(),
                c.calls,
                c.lookups,
                c.invoke_messages,
                c.total_messages,
                c.forwarding_hops,
                c.failed_calls
            );
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let mut cfg = ScenarioConfig::new(args.scenario, args.setting);
    if let Some(ms) = args.latency_ms {
        cfg.injected_one_way_latency_ms = ms;
    }
    cfg.trials = args.trials;
    cfg.strategy = args.strategy;
    cfg.seed = args.seed;
    cfg.calls = args.calls;
    if let Some(path) = &args.policies {
        match std::fs::read_to_string(path) {
            Ok(src) => cfg.policies = Some(src),
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }

    let report = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    print_summary(&report);

    let written = match &args.out {
        Some(path) => File::create(path)
            .map_err(Into::into)
            .and_then(|f| report.write_csv(f)),
        None => report.write_csv(io::sink()),
    };
    if let Err(e) = written {
        eprintln!("error writing csv: {e}");
        return ExitCode::from(2);
    }

    if report.passed() {
        ExitCode::SUCCESS
    } else {
        for f in &report.failures {
            eprintln!("FAILED: {f}");
        }
        ExitCode::FAILURE
    }
}
