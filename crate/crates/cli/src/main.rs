fn main() {
    std::process::exit(trag_cli::run(std::env::args_os()));
}
