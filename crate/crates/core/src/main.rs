use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = optstop::cli::Cli::parse();
    match optstop::cli::run(cli) {
        Ok(dir) => log::info!("artifacts in {}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
