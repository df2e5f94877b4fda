use clap::Parser;

fn main() {
    let cli = trice::cli::Cli::parse();
    if let Err(e) = trice::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
