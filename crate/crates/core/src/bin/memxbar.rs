fn main() {
    std::process::exit(memxbar::cli::run(std::env::args_os()));
}
