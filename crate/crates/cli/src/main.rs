fn main() {
    std::process::exit(polyvox_cli::main_with_args(std::env::args_os()));
}
