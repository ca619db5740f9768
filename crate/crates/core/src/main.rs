fn main() {
    env_logger::init();
    let code = netmoe::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
