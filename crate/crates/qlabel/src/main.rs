fn main() {
    std::process::exit(qlabel::cli::run());
}
