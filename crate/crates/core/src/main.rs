fn main() {
    std::process::exit(isonrsfm::cli::main());
}
