fn main() {
    std::process::exit(extractor_cli::run_cli(std::env::args_os()));
}
