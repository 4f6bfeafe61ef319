fn main() {
    std::process::exit(calref::cli::run(std::env::args_os()));
}
