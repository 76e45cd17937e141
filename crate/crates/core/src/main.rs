fn main() {
    std::process::exit(reservoir::harness::cli_main(std::env::args_os()));
}
