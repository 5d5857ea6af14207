fn main() {
    std::process::exit(fanova_cli::run(std::env::args_os()));
}
