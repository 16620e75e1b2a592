fn main() {
    std::process::exit(dmimo_core::cli::run(std::env::args_os()));
}
