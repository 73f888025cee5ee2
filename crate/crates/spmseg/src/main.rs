fn main() {
    std::process::exit(spmseg::cli::main_with_args(std::env::args_os()));
}
