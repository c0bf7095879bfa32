fn main() {
    std::process::exit(trirgnm::cli::run_cli(std::env::args_os()));
}
