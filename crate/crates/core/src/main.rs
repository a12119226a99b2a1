fn main() {
    std::process::exit(pibdfc::cli::run(std::env::args_os()));
}
