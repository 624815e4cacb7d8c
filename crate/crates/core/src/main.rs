fn main() {
    std::process::exit(futurerd::cli::run(std::env::args_os()));
}
