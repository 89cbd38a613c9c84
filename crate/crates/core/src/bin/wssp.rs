fn main() {
    std::process::exit(wssp_core::cli::main_with_args(std::env::args_os()));
}
