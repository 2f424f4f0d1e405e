fn main() {
    std::process::exit(ecoinf::cli::run(std::env::args_os()));
}
