fn main() {
    std::process::exit(paydpi_cli::run(std::env::args_os()));
}
