fn main() {
    std::process::exit(countlab::cli::dispatch(std::env::args_os()));
}
