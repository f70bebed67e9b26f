fn main() {
    std::process::exit(sfde_control::cli::execute(std::env::args_os()));
}
