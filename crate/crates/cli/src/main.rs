fn main() {
    std::process::exit(safeocc_cli::run(std::env::args_os()));
}
