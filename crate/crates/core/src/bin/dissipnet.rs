fn main() -> std::process::ExitCode {
    dissipnet::cli::main()
}
