fn main() {
    std::process::exit(safekernel::cli::run(std::env::args_os()));
}
