fn main() {
    std::process::exit(pgcompat::run(std::env::args_os()));
}
