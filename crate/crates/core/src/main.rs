fn main() {
    std::process::exit(ttadc::cli::run(std::env::args_os()));
}
