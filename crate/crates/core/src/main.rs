fn main() {
    std::process::exit(twolayer_waves::cli::run(std::env::args_os()));
}
