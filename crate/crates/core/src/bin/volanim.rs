fn main() {
    std::process::exit(volanim::cli::run(std::env::args_os()));
}
