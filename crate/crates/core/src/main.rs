fn main() {
    std::process::exit(scstsum::cli::main_with_args(std::env::args_os()));
}
