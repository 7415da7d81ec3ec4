fn main() {
    std::process::exit(adopt_core::cli::run(std::env::args_os()));
}
