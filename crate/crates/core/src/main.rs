fn main() -> std::process::ExitCode {
    osyn::cli::main()
}
