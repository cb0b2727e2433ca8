use clap::Parser;

use healbind::registry::{RegistryServer, DEFAULT_REGISTRY_ADDR};
use healbind::wire::Endpoint;

/// Standalone naming service.
#[derive(Debug, Parser)]
#[command(name = "registry", version)]
struct Args {
    #[arg(long = "registry-addr", default_value = DEFAULT_REGISTRY_ADDR)]
    registry_addr: Endpoint,
}

fn main() -> std::io::Result<()> {
    env_logger::init();
    let args = Args::parse();
    let server = RegistryServer::start(args.registry_addr.host(), args.registry_addr.port())?;
    println!("registry listening on {}", server.endpoint());
    loop {
        std::thread::park();
    }
}
