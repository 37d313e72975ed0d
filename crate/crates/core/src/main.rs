fn main() {
    std::process::exit(edgechain::cli::run(std::env::args_os()));
}
