fn main() {
    std::process::exit(hubbard_learn::cli::run(std::env::args_os()));
}
