fn main() {
    std::process::exit(petgan::cli::run(std::env::args_os()));
}
