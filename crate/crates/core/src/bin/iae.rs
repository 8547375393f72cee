fn main() {
    std::process::exit(iae::cli::main());
}
