fn main() {
    std::process::exit(singlet_lab::cli::run(std::env::args_os()));
}
