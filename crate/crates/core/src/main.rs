fn main() {
    std::process::exit(koopman::cli::run(std::env::args_os()));
}
