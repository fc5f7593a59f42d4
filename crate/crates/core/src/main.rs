fn main() {
    std::process::exit(tvprox::cli::run());
}
