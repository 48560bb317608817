use aup_cli::objective::{number, run};
use aup_core::bench::{budgeted, rosenbrock};

fn main() {
    std::process::exit(run(|cfg| {
        let n = cfg.get("n_iterations").and_then(|v| v.as_u64()).unwrap_or(1).max(1);
        let base = rosenbrock(number(cfg, "x")?, number(cfg, "y")?);
        Ok((budgeted(base, n), Some(format!("n_iterations={n}"))))
    }));
}
