use clap::Parser;
use mirrorpose_cli::{exit, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIRRORPOSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            e.exit();
        }
        Err(e) => {
            let _ = e.print();
            std::process::exit(exit::PARSE);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
