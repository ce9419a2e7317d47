fn main() {
    std::process::exit(urm_core::cli::dispatch(std::env::args_os()));
}
