fn main() {
    std::process::exit(crowdgp::cli::main());
}
