fn main() {
    std::process::exit(volcap_cli::run(std::env::args_os()));
}
