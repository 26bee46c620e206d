fn main() {
    std::process::exit(robust_ot::cli::run(std::env::args_os()));
}
