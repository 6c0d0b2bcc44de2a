fn main() {
    std::process::exit(hpq::cli::run(std::env::args_os()));
}
