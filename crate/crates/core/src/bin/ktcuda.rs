fn main() {
    std::process::exit(ktcuda::cli::run(std::env::args_os()));
}
