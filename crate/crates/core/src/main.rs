fn main() {
    macop::cli::configure_threads();
    std::process::exit(macop::cli::run_cli(std::env::args_os()));
}
