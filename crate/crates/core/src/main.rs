fn main() {
    std::process::exit(miso_sud::cli::run(std::env::args_os()));
}
