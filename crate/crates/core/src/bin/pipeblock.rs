fn main() {
    std::process::exit(pipeblock::cli::run(std::env::args_os()));
}
