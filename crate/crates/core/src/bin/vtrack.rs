fn main() {
    std::process::exit(vtrack::cli::main_with_args(std::env::args_os()));
}
