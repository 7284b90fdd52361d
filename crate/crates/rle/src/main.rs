fn main() {
    std::process::exit(rle::cli::run());
}
