fn main() {
    std::process::exit(aggcorrect::cli::main_with_args(std::env::args_os()));
}
