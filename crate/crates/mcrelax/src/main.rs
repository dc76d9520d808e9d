fn main() -> std::process::ExitCode {
    mcrelax::cli::run()
}
