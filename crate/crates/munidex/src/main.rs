fn main() {
    std::process::exit(munidex::cli::main());
}
