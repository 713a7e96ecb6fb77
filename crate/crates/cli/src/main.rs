fn main() {
    std::process::exit(doubling_lab_cli::app::main_with_args(std::env::args_os()));
}
