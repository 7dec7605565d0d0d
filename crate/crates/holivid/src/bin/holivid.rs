fn main() {
    std::process::exit(holivid::cli::main_with_args(std::env::args_os()));
}
