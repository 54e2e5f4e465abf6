fn main() {
    std::process::exit(ouhjb::cli::dispatch(std::env::args_os()));
}
