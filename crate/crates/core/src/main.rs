fn main() {
    std::process::exit(dgrpo_lab::cli::dispatch(std::env::args_os()));
}
