fn main() {
    std::process::exit(primelab::cli::main_with(std::env::args_os()));
}
