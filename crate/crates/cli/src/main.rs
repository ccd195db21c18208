fn main() {
    std::process::exit(talkmesh_cli::run(std::env::args_os()));
}
