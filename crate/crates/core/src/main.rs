fn main() {
    std::process::exit(binpack_adversary::cli::main());
}
