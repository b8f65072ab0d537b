fn main() {
    std::process::exit(gnormal::cli::run(std::env::args_os()));
}
