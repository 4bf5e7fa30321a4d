fn main() -> std::process::ExitCode {
    asrm::cli::main()
}
