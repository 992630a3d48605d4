fn main() {
    std::process::exit(phrasedet_cli::commands::main_with(std::env::args_os()));
}
