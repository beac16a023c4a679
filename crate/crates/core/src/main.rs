fn main() {
    std::process::exit(ganatt::cli::run(std::env::args_os()));
}
