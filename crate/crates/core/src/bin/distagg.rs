fn main() {
    std::process::exit(distagg::cli::main_with_args(std::env::args_os()));
}
