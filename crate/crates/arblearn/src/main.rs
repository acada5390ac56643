use clap::Parser;

fn main() {
    let code = arblearn::cli::run(arblearn::cli::Cli::parse());
    std::process::exit(code);
}
