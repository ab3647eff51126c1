fn main() {
    std::process::exit(aaec::cli::main());
}
