fn main() {
    std::process::exit(mlta_cli::run(std::env::args_os()));
}
