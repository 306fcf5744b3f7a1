fn main() -> std::process::ExitCode {
    complyflow_server::cli::main()
}
