fn main() {
    std::process::exit(adar::cli::run(std::env::args_os(), &mut std::io::stdout()));
}
