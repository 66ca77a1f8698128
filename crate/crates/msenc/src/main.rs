fn main() {
    std::process::exit(msenc::cli::run(std::env::args_os()));
}
