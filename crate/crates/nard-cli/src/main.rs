fn main() {
    std::process::exit(nard_cli::run(std::env::args_os()));
}
