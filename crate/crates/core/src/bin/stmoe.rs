fn main() {
    std::process::exit(stmoe::cli::run_cli(std::env::args_os()));
}
