//! Sleeps for the `sleep` parameter (seconds, default 1) and reports it.

use aup_cli::objective::run;
use std::time::Duration;

fn main() {
    std::process::exit(run(|cfg| {
        let secs = cfg.get("sleep").and_then(|v| v.as_f64()).unwrap_or(1.0);
        std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
        Ok((secs, None))
    }));
}
