fn main() {
    std::process::exit(whilter_cli::app::main_with(std::env::args_os()));
}
