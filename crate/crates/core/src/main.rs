fn main() {
    std::process::exit(tabletop_loop::cli::main_with_args(std::env::args_os()));
}
