use clap::Parser;

fn main() {
    let code = newton_forge_cli::run(newton_forge_cli::Cli::parse());
    std::process::exit(code);
}
