use aup_cli::objective::{number, run};
use aup_core::bench::rosenbrock;

fn main() {
    std::process::exit(run(|cfg| Ok((rosenbrock(number(cfg, "x")?, number(cfg, "y")?), None))));
}
