fn main() {
    std::process::exit(ioc_core::cli::main_with_env());
}
