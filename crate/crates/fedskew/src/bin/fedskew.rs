fn main() {
    std::process::exit(fedskew::cli::run(std::env::args_os()));
}
