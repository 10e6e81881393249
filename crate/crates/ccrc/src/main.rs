fn main() {
    std::process::exit(ccrc::cli::main_with_args(std::env::args_os()));
}
