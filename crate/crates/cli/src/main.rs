fn main() {
    std::process::exit(coexist_cli::main_with(std::env::args_os()));
}
