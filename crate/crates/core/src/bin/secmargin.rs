fn main() {
    env_logger::init();
    std::process::exit(secmargin::cli::run(std::env::args_os()));
}
