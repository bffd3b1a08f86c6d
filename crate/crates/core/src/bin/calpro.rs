fn main() -> std::process::ExitCode {
    calpro::cli::main_with_args(std::env::args_os())
}
