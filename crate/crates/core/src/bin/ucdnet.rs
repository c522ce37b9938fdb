fn main() {
    std::process::exit(ucdnet::cli::main_with_args(std::env::args_os()));
}
