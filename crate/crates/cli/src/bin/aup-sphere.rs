use aup_cli::objective::{numeric_params, run};
use aup_core::bench::sphere;

fn main() {
    std::process::exit(run(|cfg| Ok((sphere(&numeric_params(cfg)), None))));
}
