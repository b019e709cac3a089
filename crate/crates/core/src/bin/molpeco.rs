fn main() {
    std::process::exit(molpeco::cli::main_with_args(std::env::args_os()));
}
