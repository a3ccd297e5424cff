fn main() {
    std::process::exit(abda::cli::main_with_args(std::env::args_os()));
}
