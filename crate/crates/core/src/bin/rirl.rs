fn main() {
    std::process::exit(rirl::cli::run_from(std::env::args_os()));
}
