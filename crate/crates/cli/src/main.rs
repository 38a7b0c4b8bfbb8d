fn main() {
    std::process::exit(hatelens::cli::main_with_args(std::env::args_os()));
}
