fn main() {
    std::process::exit(coinflip::cli::main_from(std::env::args_os()));
}
