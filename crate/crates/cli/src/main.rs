use std::io;

fn main() {
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::stdout().lock();
    if let Err(e) = avsd_cli::run(std::env::args_os(), &mut input, &mut out) {
        eprintln!("{}", e.report());
        std::process::exit(e.exit_code());
    }
}
