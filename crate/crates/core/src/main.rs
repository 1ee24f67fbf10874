fn main() {
    std::process::exit(rigcal::cli::run(std::env::args_os()));
}
