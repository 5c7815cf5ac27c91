fn main() {
    std::process::exit(kocal::cli::run(std::env::args_os()));
}
