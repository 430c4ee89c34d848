fn main() {
    std::process::exit(mono2d::cli::run(std::env::args_os()));
}
