fn main() {
    std::process::exit(hpdkit::cli::run(std::env::args_os()));
}
