fn main() {
    std::process::exit(lnabl::cli::main_with_args(std::env::args_os()));
}
