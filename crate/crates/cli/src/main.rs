use clap::Parser;

fn main() {
    let cli = geolan_cli::Cli::parse();
    if let Err(e) = geolan_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
