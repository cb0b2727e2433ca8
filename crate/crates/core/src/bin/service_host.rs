use clap::Parser;

use healbind::service::{ServiceDescriptor, ServiceHost, ServiceKind};
use healbind::transport::Transport;
use healbind::wire::{classify_arg, ArgValue, Endpoint};

/// Host one named service until killed. Fault injection arrives on the
/// control endpoint.
#[derive(Debug, Parser)]
#[command(name = "service-host", version)]
struct Args {
    #[arg(long)]
    name: String,
    #[arg(long, value_parser = |s: &str| s.parse::<ServiceKind>())]
    kind: ServiceKind,
    #[arg(long)]
    addr: Endpoint,
    #[arg(long)]
    ctl: Endpoint,
    #[arg(long)]
    registry: Endpoint,
    /// Initial parameter, `key=value`; integer-looking values become Int.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, ArgValue)>,
}

fn parse_param(s: &str) -> Result<(String, ArgValue), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    if k.is_empty() {
        return Err("empty parameter name".into());
    }
    Ok((k.to_string(), classify_arg(v)))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args = Args::parse();
    let mut desc = ServiceDescriptor::new(args.name, args.kind, args.addr, args.ctl)?;
    for (k, v) in args.params {
        desc = desc.with_param(k, v);
    }
    let host = ServiceHost::start(desc, &args.registry, Transport::default())?;
    println!("{} serving as {}", host.name(), host.record());
    loop {
        std::thread::park();
    }
}
