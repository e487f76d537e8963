fn main() -> std::process::ExitCode {
    facediff::harness::cli::main()
}
