fn main() {
    std::process::exit(funsurvey_cli::run_from(std::env::args_os()));
}
