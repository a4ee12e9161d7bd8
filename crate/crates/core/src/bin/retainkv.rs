fn main() {
    std::process::exit(retainkv::cli::main_with_args(std::env::args().collect()));
}
