fn main() {
    std::process::exit(ou_gauss::cli::run(std::env::args_os()));
}
