fn main() {
    std::process::exit(coxplore::cli::run(std::env::args_os()));
}
