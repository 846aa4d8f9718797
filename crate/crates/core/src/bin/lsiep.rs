use clap::Parser;

fn main() {
    let cli = lsiep::cli::Cli::parse();
    std::process::exit(lsiep::cli::execute(cli));
}
