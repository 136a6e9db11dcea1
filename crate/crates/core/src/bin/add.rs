fn main() {
    add_core::cli::init_logging();
    std::process::exit(add_core::cli::main_with_args(std::env::args_os()));
}
