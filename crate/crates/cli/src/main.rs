fn main() {
    std::process::exit(subnetcl::run_cli(std::env::args_os()));
}
