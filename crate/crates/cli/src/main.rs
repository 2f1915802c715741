fn main() -> std::process::ExitCode {
    qexec_cli::app::main()
}
