use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = agriqrs_cli::args::Cli::parse();
    if let Err(e) = agriqrs_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(agriqrs_cli::exit_code(&e));
    }
}
