fn main() {
    std::process::exit(hwflow::cli::main(std::env::args_os()));
}
