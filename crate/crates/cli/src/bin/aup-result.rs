//! Prints a result line: `aup-result <score> [aux]`.

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(aup_cli::print_result(&args));
}
