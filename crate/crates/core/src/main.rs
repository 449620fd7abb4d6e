fn main() {
    std::process::exit(rir_core::cli::run_command(std::env::args_os()));
}
