fn main() {
    std::process::exit(mamlab::cli::main());
}
