fn main() {
    std::process::exit(sleepstate::cli::run(std::env::args_os()));
}
