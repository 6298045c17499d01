fn main() {
    std::process::exit(edgeuda::cli::run(std::env::args_os()));
}
