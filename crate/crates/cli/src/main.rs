mod config;
mod run;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = config::Cli::parse();
    let result = run::config_from_cli(&cli).and_then(|config| run::execute(&config, cli.workers, &cli.out_dir));
    if let Err(e) = result {
        eprintln!("cesmc: {e}");
        std::process::exit(e.exit_code());
    }
}
