fn main() {
    std::process::exit(protogen_cli::run(std::env::args_os()));
}
