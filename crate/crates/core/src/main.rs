fn main() {
    std::process::exit(wigner_mra::cli::run_cli(std::env::args_os()));
}
