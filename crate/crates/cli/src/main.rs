use clap::Parser;

use roughness_cli::{env_tolerance, run, Cli};

fn main() {
    let cli = Cli::parse();
    let env = env_tolerance();
    let code = run(&cli, env.as_deref(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
