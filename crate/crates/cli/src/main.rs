fn main() {
    std::process::exit(relens_cli::run(std::env::args_os()));
}
