fn main() -> std::process::ExitCode {
    autofeedback::cli::main()
}
