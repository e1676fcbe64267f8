fn main() {
    std::process::exit(moncat_cli::run(std::env::args_os()));
}
