fn main() {
    std::process::exit(mup_core::harness::cli_main(std::env::args_os()));
}
