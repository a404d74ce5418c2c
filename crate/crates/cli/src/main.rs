fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UHINET_LOG", "info")).init();
    std::process::exit(uhinet_cli::run(std::env::args_os()));
}
