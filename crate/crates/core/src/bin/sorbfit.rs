fn main() {
    std::process::exit(sorbfit::cli::run_from(std::env::args_os()));
}
