fn main() {
    std::process::exit(flexwave::cli::main_with_args(std::env::args_os()));
}
