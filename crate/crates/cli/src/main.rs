fn main() {
    std::process::exit(astrosnn_cli::run(std::env::args_os()));
}
