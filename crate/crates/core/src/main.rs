fn main() {
    std::process::exit(ensemble_bridge::cli::run(std::env::args_os()));
}
