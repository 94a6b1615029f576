fn main() -> std::process::ExitCode {
    probekit::cli::main()
}
