fn main() {
    std::process::exit(parallel_sfl::cli::main_with_args(std::env::args_os()));
}
