fn main() {
    std::process::exit(strokepred::cli::main());
}
