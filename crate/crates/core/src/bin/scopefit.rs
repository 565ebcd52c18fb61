fn main() {
    std::process::exit(scopefit::cli::run(std::env::args_os()));
}
