fn main() {
    std::process::exit(mvbsc::cli::main());
}
