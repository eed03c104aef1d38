fn main() {
    std::process::exit(tvbarc::cli::run(std::env::args_os()));
}
