fn main() {
    std::process::exit(wavecast::cli::main_with_args(std::env::args_os()));
}
