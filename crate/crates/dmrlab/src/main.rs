fn main() {
    std::process::exit(dmrlab::cli::run());
}
