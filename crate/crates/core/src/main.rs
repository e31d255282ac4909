fn main() -> std::process::ExitCode {
    loadcast::cli::main()
}
