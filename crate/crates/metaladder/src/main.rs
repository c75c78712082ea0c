fn main() {
    std::process::exit(metaladder::cli::run(std::env::args_os()));
}
