fn main() {
    std::process::exit(gpmix::cli::main_with_args(std::env::args_os()));
}
