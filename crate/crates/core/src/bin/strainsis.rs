fn main() {
    std::process::exit(strainsis::cli::run_cli(std::env::args_os()));
}
