fn main() {
    std::process::exit(tbnet::cli::run(std::env::args_os()));
}
