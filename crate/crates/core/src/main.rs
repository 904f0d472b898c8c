fn main() {
    std::process::exit(chemolab::harness::cli::run(std::env::args_os()));
}
