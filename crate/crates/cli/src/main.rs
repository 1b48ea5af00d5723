use std::io::{stderr, stdout};

fn main() {
    let code = kbae_cli::dispatch(std::env::args_os(), &mut stdout().lock(), &mut stderr().lock());
    std::process::exit(code);
}
