fn main() {
    std::process::exit(dmf::cli::main_with_args(std::env::args_os()));
}
