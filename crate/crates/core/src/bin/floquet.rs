fn main() {
    std::process::exit(floquet_dirac::cli::main_with_args(std::env::args_os()));
}
