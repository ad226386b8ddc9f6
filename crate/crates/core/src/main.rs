fn main() {
    std::process::exit(quadlayout::cli::run(std::env::args_os()));
}
