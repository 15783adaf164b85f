use clap::Parser;

fn main() {
    let cli = elicit_service::cli::Cli::parse();
    if let Err(e) = elicit_service::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
