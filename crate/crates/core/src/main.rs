fn main() {
    std::process::exit(i3dol::cli::main_with_args(std::env::args_os()));
}
