fn main() {
    std::process::exit(q8s_cli::run_cli(std::env::args_os()));
}
