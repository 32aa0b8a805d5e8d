fn main() {
    std::process::exit(mfs_core::cli::main_with_args(std::env::args_os()));
}
