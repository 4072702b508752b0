use std::io::{IsTerminal, Write};

fn main() {
    let color = std::env::var("SECULEX_COLOR").map_or(true, |v| v != "0") && std::io::stdout().is_terminal();
    let out = seculex_cli::run(std::env::args_os(), color);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(out.stdout.as_bytes());
    let _ = stdout.flush();
    let _ = std::io::stderr().write_all(out.stderr.as_bytes());
    std::process::exit(out.code as i32);
}
