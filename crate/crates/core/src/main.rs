fn main() {
    std::process::exit(polysent::cli::run(std::env::args_os()));
}
