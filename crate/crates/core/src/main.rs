fn main() {
    std::process::exit(delirium_risk::cli::run(std::env::args_os()));
}
