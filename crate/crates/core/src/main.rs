fn main() {
    std::process::exit(conflab::cli::run(std::env::args_os()));
}
