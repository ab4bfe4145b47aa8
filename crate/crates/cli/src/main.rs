fn main() {
    std::process::exit(o2m_cli::run(std::env::args_os()));
}
