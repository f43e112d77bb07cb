fn main() {
    std::process::exit(spotsgd::cli::run());
}
