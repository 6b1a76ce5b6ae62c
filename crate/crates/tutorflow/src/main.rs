use clap::Parser;

fn main() {
    let cli = tutorflow::cli::Cli::parse();
    if let Err(e) = tutorflow::cli::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
