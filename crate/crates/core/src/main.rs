fn main() {
    std::process::exit(offload_core::cli::main_with_args(std::env::args_os()));
}
