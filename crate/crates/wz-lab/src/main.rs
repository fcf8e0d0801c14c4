use std::process::exit;

fn main() {
    exit(wz_lab::cli::run(std::env::args_os()));
}
