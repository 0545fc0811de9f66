fn main() {
    std::process::exit(pltm::cli::run(std::env::args_os()));
}
