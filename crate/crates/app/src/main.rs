fn main() {
    std::process::exit(canopy_app::cli::main_with_args(std::env::args_os()));
}
