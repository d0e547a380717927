fn main() {
    std::process::exit(spikepose::cli::run(std::env::args_os()));
}
