fn main() {
    std::process::exit(cauchy_fwi::cli::cli_main(std::env::args_os()));
}
