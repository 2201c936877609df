fn main() {
    std::process::exit(koopman_pg::cli::main_from_args());
}
