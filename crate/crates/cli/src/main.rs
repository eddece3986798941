fn main() {
    std::process::exit(seal_cli::main_with(std::env::args_os(), std::env::vars()));
}
