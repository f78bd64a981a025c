fn main() {
    std::process::exit(twostream_cli::run(std::env::args_os()));
}
