fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CKSC_LOG", "error")).init();
    std::process::exit(cksc::cli::main_with_args(std::env::args_os()));
}
