fn main() {
    std::process::exit(icunet::cli::main_with_args(std::env::args_os()));
}
