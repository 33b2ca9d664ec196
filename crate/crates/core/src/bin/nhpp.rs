fn main() {
    std::process::exit(nhpp_flow::cli::run(std::env::args_os()));
}
