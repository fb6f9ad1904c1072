fn main() {
    std::process::exit(wavecontrol::cli::main());
}
