fn main() {
    std::process::exit(projconst::cli::run_main());
}
