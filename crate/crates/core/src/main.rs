use clap::Parser;

fn main() {
    let cli = cxray::cli::Cli::parse();
    if let Err(e) = cxray::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
