fn main() {
    std::process::exit(morphtag::cli::main_with(std::env::args_os()));
}
