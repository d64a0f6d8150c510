fn main() {
    std::process::exit(slgtformer::cli::main_with_args(std::env::args_os()));
}
