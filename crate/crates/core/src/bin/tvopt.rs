fn main() {
    std::process::exit(tvopt::cli::main_with_args(std::env::args_os()));
}
