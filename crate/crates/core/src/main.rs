fn main() {
    std::process::exit(stablekit::cli::run_command(std::env::args_os()));
}
