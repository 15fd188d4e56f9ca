fn main() {
    let code = cascade_eso::cli::main_with_args(std::env::args().collect());
    std::process::exit(code);
}
