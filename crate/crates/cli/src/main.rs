fn main() {
    std::process::exit(perce_cli::run(std::env::args_os()));
}
