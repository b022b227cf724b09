fn main() {
    std::process::exit(ctsdm::cli::run(std::env::args_os()));
}
