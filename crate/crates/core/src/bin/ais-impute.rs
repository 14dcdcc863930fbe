fn main() {
    std::process::exit(ais_impute::cli::run(std::env::args_os()));
}
