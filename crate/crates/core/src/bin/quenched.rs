fn main() {
    std::process::exit(quenched::cli::run(std::env::args_os()));
}
