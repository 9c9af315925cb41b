use clap::Parser;

fn main() {
    let cli = unmix_cli::Cli::parse();
    if let Err(e) = unmix_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
