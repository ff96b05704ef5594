fn main() {
    std::process::exit(interbank_mfg::cli::run(std::env::args_os()));
}
