fn main() {
    std::process::exit(cfb::cli::run_from(std::env::args_os()));
}
