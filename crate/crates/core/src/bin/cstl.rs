fn main() {
    std::process::exit(cstl::cli::main_with_args(std::env::args_os()));
}
