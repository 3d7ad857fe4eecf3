fn main() {
    std::process::exit(mrm::cli::main_with_args(std::env::args_os()));
}
