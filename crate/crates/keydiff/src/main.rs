fn main() {
    std::process::exit(keydiff::cli::run_from(std::env::args_os()));
}
