fn main() {
    std::process::exit(mvcorr::cli::run());
}
