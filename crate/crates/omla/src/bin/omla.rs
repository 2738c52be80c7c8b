fn main() {
    std::process::exit(omla::cli::run());
}
