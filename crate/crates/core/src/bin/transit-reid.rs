fn main() {
    std::process::exit(transit_reid::cli::run_cli(std::env::args_os()));
}
