fn main() {
    std::process::exit(strata_core::cli::main());
}
