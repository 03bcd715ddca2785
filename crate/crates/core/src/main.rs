fn main() {
    std::process::exit(stratus::cli::main_with_args(std::env::args_os()));
}
