fn main() {
    std::process::exit(pipeweld::cli::run_main());
}
