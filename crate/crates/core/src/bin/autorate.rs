fn main() {
    std::process::exit(autorate::cli::main_with_args(std::env::args_os()));
}
