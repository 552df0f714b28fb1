fn main() {
    std::process::exit(oodcl::cli::main());
}
