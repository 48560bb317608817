//! End-to-end acceptance checks, one `[PASS]`/`[FAIL]` line per criterion.
//! Exits nonzero if any criterion fails.

use aup_core::bandit::{BohbProposer, BracketPlan, HyperBandProposer, Promotion, RESUME_KEY};
use aup_core::bench::{run_benchmark, BenchConfig};
use aup_core::model::gp::{log_marginal_likelihood, log_marginal_likelihood_grad};
use aup_core::model::{expected_improvement, split_sizes, GpSurrogate, KernelParams, TpeModel, TpeProposer};
use aup_core::orchestrator::{summarize, Event, Experiment, RunOptions};
use aup_core::proposers::{Proposal, Proposer, ProposerState};
use aup_core::resources::{format_result_line, parse_result_line, EnvConfig};
use aup_core::space::{
    Atom, BanditOptions, BohbOptions, ExperimentConfig, JobConfig, JobResult, ParamValue, ParameterSpec, SearchSpace,
    TpeOptions,
};
use aup_core::tracking::{ExperimentStatus, JobState, Store};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

const AUP: &str = env!("CARGO_BIN_EXE_aup");
const ROSENBROCK: &str = env!("CARGO_BIN_EXE_aup-rosenbrock");
const BUDGETED: &str = env!("CARGO_BIN_EXE_aup-budgeted");
const SPHERE: &str = env!("CARGO_BIN_EXE_aup-sphere");
const SLEEP: &str = env!("CARGO_BIN_EXE_aup-sleep");
const RESULT: &str = env!("CARGO_BIN_EXE_aup-result");

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, limit_s: f64) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    ensure!(t < limit_s, "took {t:.1}s, limit {limit_s}s");
    Ok(t)
}

fn env_in(dir: &Path, n_cpus: usize) -> EnvConfig {
    EnvConfig::local_cpus(n_cpus, dir.join("aup.db"), dir.join("runs"))
}

fn rosenbrock(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

fn xy_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParameterSpec::float("x", -5.0, 10.0).unwrap(),
        ParameterSpec::float("y", -5.0, 10.0).unwrap(),
    ])
    .unwrap()
}

fn experiment(doc: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&doc).expect("valid experiment config")
}

fn rosenbrock_doc(script: &str, proposer: &str, n_samples: usize, n_parallel: usize, options: Value) -> Value {
    json!({
        "proposer": proposer,
        "script": script,
        "resource": "cpu",
        "n_parallel": n_parallel,
        "target": "min",
        "parameter_config": [
            {"name": "x", "range": [-5.0, 10.0], "type": "float"},
            {"name": "y", "range": [-5.0, 10.0], "type": "float"}
        ],
        "n_samples": n_samples,
        "proposer_options": options
    })
}

// AC-1 ---------------------------------------------------------------------

fn ac1() -> Check {
    let start = Instant::now();
    let job_text = r#"{"x": -5.0, "y": 5.0, "job_id": 0}"#;
    let job = JobConfig::load(job_text, &xy_space()).map_err(|e| e.to_string())?;
    ensure!(job.job_id == 0, "job_id {}", job.job_id);
    ensure!(job.get("x") == Some(&ParamValue::Float(-5.0)), "x = {:?}", job.get("x"));
    ensure!(job.get("y") == Some(&ParamValue::Float(5.0)), "y = {:?}", job.get("y"));
    ensure!(job.save() == job_text, "job config emitted as {}", job.save());
    let again = JobConfig::load(&job.save(), &xy_space()).map_err(|e| e.to_string())?;
    ensure!(again == job, "job config round trip changed value");

    let exp_text = r#"
      {
        "proposer": "random",
        "script": "mnist.py",
        "resource": "gpu",
        "n_parallel": 2,
        "target": "min",
        "parameter_config":
        [
          {"name": "conv1", "range": [20, 50],  "type": "int"},
          {"name": "dropout", "range": [0.5, 0.9], "type": "float"}
        ],
        "n_samples": 100
      }"#;
    let cfg = ExperimentConfig::parse(exp_text).map_err(|e| e.to_string())?;
    ensure!(cfg.n_parallel == 2 && cfg.n_samples == 100 && cfg.space.dim() == 2, "parsed fields {cfg:?}");
    ensure!(cfg.proposer().as_str() == "random", "proposer {}", cfg.proposer());
    let emitted = cfg.to_json_string();
    let back = ExperimentConfig::parse(&emitted).map_err(|e| e.to_string())?;
    ensure!(back == cfg, "experiment config round trip changed value");
    ensure!(back.to_json_string() == emitted, "experiment config emission not stable");

    let lines = [(0.98, None, "#AUP_RESULT:0.98"), (0.125, Some("epoch=10"), "#AUP_RESULT:0.125,epoch=10")];
    for (score, aux, want) in lines {
        let got = format_result_line(score, aux).map_err(|e| e.to_string())?;
        ensure!(got == want, "result line {got:?}, want {want:?}");
        let parsed = parse_result_line(&format!("log output\n{got}\n")).map_err(|e| e.to_string())?;
        ensure!(parsed == (score, aux.map(String::from)), "parsed {parsed:?}");
        let mut cmd = Command::new(RESULT);
        cmd.arg(score.to_string());
        if let Some(a) = aux {
            cmd.arg(a);
        }
        let out = cmd.output().map_err(|e| e.to_string())?;
        ensure!(out.stdout == format!("{want}\n").as_bytes(), "helper printed {:?}", String::from_utf8_lossy(&out.stdout));
    }
    let t = within(start, 1.0)?;
    Ok(format!("job config byte-exact, experiment config round trip, result lines byte-exact ({t:.2}s)"))
}

// AC-2 ---------------------------------------------------------------------

fn ac2() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 4);
    let mut multisets = Vec::new();
    let mut notes = Vec::new();
    for n_parallel in [1usize, 2, 4] {
        let cfg = experiment(rosenbrock_doc(ROSENBROCK, "random", 100, n_parallel, json!({"random_seed": 2024})));
        let mut exp = Experiment::create(cfg, &env, RunOptions::default()).map_err(|e| e.to_string())?;
        let pool = exp.pool().clone();
        let (mut live, mut peak) = (0usize, 0usize);
        let summary = exp
            .run(&mut |e| match e {
                Event::Launched { .. } => {
                    live += 1;
                    peak = peak.max(live);
                }
                Event::Completed { .. } => live -= 1,
                Event::Stopping(_) => {}
            })
            .map_err(|e| e.to_string())?;
        ensure!(peak <= n_parallel, "event-level concurrency {peak} > {n_parallel}");
        ensure!(pool.max_busy() <= n_parallel, "pool concurrency {} > {n_parallel}", pool.max_busy());
        ensure!(summary.max_parallel <= n_parallel, "loop concurrency {} > {n_parallel}", summary.max_parallel);
        let store = Store::open(&env.database).map_err(|e| e.to_string())?;
        let jobs = store.jobs(summary.eid).map_err(|e| e.to_string())?;
        ensure!(jobs.len() == 100, "n_parallel={n_parallel}: {} job rows", jobs.len());
        ensure!(jobs.iter().all(|j| j.status == JobState::Finished), "n_parallel={n_parallel}: unfinished rows");
        let mut pairs = Vec::new();
        for j in &jobs {
            let c: Value = serde_json::from_str(&j.job_config).map_err(|e| e.to_string())?;
            let score = j.score.unwrap();
            let want = rosenbrock(c["x"].as_f64().unwrap(), c["y"].as_f64().unwrap());
            ensure!(score == want, "job {} score {score} != f(x,y) {want}", j.jid);
            pairs.push((j.job_config.clone(), score.to_bits()));
        }
        pairs.sort();
        multisets.push(pairs);
        notes.push(format!("p={n_parallel} peak={} {:.1}s", pool.max_busy(), summary.wall_time));
    }
    ensure!(multisets[0] == multisets[1] && multisets[1] == multisets[2], "(config, score) multisets differ");
    let t = within(start, 60.0)?;
    Ok(format!("100 rows each, identical multisets; {} ({t:.1}s)", notes.join(", ")))
}

// AC-3 ---------------------------------------------------------------------

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn ac3() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 4);
    let sizes = [3usize, 3, 3, 3, 2];
    let params: Vec<Value> = sizes
        .iter()
        .enumerate()
        .map(|(i, n)| json!({"name": format!("p{i}"), "range": [-1.0, 1.0], "type": "float", "grid_n": n}))
        .collect();
    let cfg = experiment(json!({
        "proposer": "grid",
        "script": SPHERE,
        "n_parallel": 4,
        "parameter_config": params,
        "n_samples": 1000
    }));
    let mut exp = Experiment::create(cfg, &env, RunOptions::default()).map_err(|e| e.to_string())?;
    let summary = exp.run(&mut |_| {}).map_err(|e| e.to_string())?;
    let store = Store::open(&env.database).map_err(|e| e.to_string())?;
    let jobs = store.jobs(summary.eid).map_err(|e| e.to_string())?;
    ensure!(jobs.len() == 162, "{} jobs", jobs.len());

    // Independent lattice enumeration.
    let axes: Vec<Vec<f64>> = sizes.iter().map(|&n| linspace(-1.0, 1.0, n)).collect();
    let mut expected: Vec<Vec<u64>> = vec![vec![]];
    for axis in &axes {
        expected = expected.into_iter().flat_map(|p| axis.iter().map(move |v| [p.clone(), vec![v.to_bits()]].concat())).collect();
    }
    expected.sort();
    let mut got: Vec<Vec<u64>> = jobs
        .iter()
        .map(|j| {
            let c: Value = serde_json::from_str(&j.job_config).unwrap();
            (0..5).map(|i| c[format!("p{i}")].as_f64().unwrap().to_bits()).collect()
        })
        .collect();
    got.sort();
    ensure!(got == expected, "issued configs differ from the lattice");
    ensure!(summary.n_finished == 162, "{} finished", summary.n_finished);
    let lattice_min = expected
        .iter()
        .map(|p| p.iter().map(|b| f64::from_bits(*b).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let best = summary.best.as_ref().map(|b| b.score);
    ensure!(best == Some(lattice_min), "best {best:?}, lattice minimum {lattice_min}");
    let t = within(start, 60.0)?;
    Ok(format!("162 jobs = lattice product 3*3*3*3*2 ({t:.1}s)"))
}

// AC-4 ---------------------------------------------------------------------

struct OracleRound {
    n: u64,
    r: u64,
}

fn plan_oracle(r_max: u64, eta: u64) -> (u32, Vec<Vec<OracleRound>>) {
    let mut s_max = 0u32;
    while eta.pow(s_max + 1) <= r_max {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let num = (s_max as u64 + 1) * eta.pow(s);
            let n0 = num.div_ceil(s as u64 + 1);
            (0..=s).map(|i| OracleRound { n: n0 / eta.pow(i), r: r_max / eta.pow(s - i) }).collect()
        })
        .collect();
    (s_max, brackets)
}

fn ac4() -> Check {
    let start = Instant::now();
    let plan = BracketPlan::hyperband(81, 3).map_err(|e| e.to_string())?;
    let (s_max, oracle) = plan_oracle(81, 3);
    ensure!(s_max == 4 && plan.s_max == 4, "s_max plan={} oracle={s_max}", plan.s_max);
    ensure!(plan.brackets.len() == oracle.len(), "{} brackets", plan.brackets.len());
    let mut oracle_total = 0;
    for (b, o) in plan.brackets.iter().zip(&oracle) {
        ensure!(b.rounds.len() == o.len(), "bracket s={} has {} rounds", b.s, b.rounds.len());
        for (r, w) in b.rounds.iter().zip(o) {
            ensure!(r.n_configs == w.n && r.budget == w.r, "bracket s={}: ({}, {}) vs oracle ({}, {})", b.s, r.n_configs, r.budget, w.n, w.r);
            oracle_total += w.n * w.r;
        }
    }
    let n0: Vec<u64> = oracle.iter().map(|b| b[0].n).collect();
    ensure!(n0 == [81, 34, 15, 8, 5], "round-0 sizes {n0:?}");
    ensure!(plan.total_budget() == oracle_total, "plan total {} vs oracle {oracle_total}", plan.total_budget());

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 4);
    let mut notes = Vec::new();
    for proposer in ["hyperband", "bohb"] {
        let cfg = experiment(rosenbrock_doc(BUDGETED, proposer, 1000, 4, json!({"random_seed": 5, "max_budget": 81, "eta": 3})));
        let mut exp = Experiment::create(cfg, &env, RunOptions::default()).map_err(|e| e.to_string())?;
        let summary = exp.run(&mut |_| {}).map_err(|e| e.to_string())?;
        let store = Store::open(&env.database).map_err(|e| e.to_string())?;
        let jobs = store.jobs(summary.eid).map_err(|e| e.to_string())?;
        let mut issued = 0u64;
        for j in &jobs {
            let c: Value = serde_json::from_str(&j.job_config).map_err(|e| e.to_string())?;
            let n = c["n_iterations"].as_u64().ok_or("job without n_iterations")?;
            ensure!(j.aux_string.as_deref() == Some(&format!("n_iterations={n}")), "job {} ran with aux {:?}", j.jid, j.aux_string);
            let want = rosenbrock(c["x"].as_f64().unwrap(), c["y"].as_f64().unwrap()) + 10.0 / n as f64;
            ensure!(j.score == Some(want), "job {} score {:?} vs {want}", j.jid, j.score);
            issued += n;
        }
        ensure!(summary.n_failed == 0, "{proposer}: {} failures", summary.n_failed);
        ensure!(issued == oracle_total, "{proposer}: issued {issued} epochs, plan {oracle_total}");
        ensure!(summary.total_iterations == oracle_total, "{proposer}: summary says {}", summary.total_iterations);
        notes.push(format!("{proposer} {} jobs", jobs.len()));
    }
    let t = within(start, 120.0)?;
    Ok(format!("table matches oracle, {oracle_total} epochs issued exactly ({}; {t:.1}s)", notes.join(", ")))
}

// AC-5 ---------------------------------------------------------------------

fn brute_top_k(results: &[(u64, Option<f64>)], k: usize) -> Vec<u64> {
    let mut ok: Vec<(f64, u64)> = results.iter().filter_map(|(j, s)| s.map(|s| (s, *j))).collect();
    ok.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    ok.into_iter().take(k).map(|(_, j)| j).collect()
}

fn drive_bandit(p: &mut dyn Proposer, rng: &mut ChaCha8Rng) -> Result<(BTreeMap<u64, Option<f64>>, Vec<u64>), String> {
    let mut pending = Vec::new();
    let mut issued = BTreeMap::new();
    let mut resumed = Vec::new();
    for _ in 0..100_000 {
        match p.get_param() {
            Proposal::Config(c) => {
                if let Some(r) = c.aux.get(RESUME_KEY) {
                    resumed.push(r.as_u64().ok_or("resume_from not an id")?);
                }
                pending.push(c.job_id);
            }
            Proposal::Wait | Proposal::Done => {
                if pending.is_empty() {
                    break;
                }
                let i = rng.gen_range(0..pending.len());
                let id = pending.swap_remove(i);
                let result = if rng.gen_bool(0.1) {
                    JobResult::failed(id, 0.0)
                } else {
                    JobResult::finished(id, rng.gen_range(0..6) as f64, None, 0.0)
                };
                issued.insert(id, result.score);
                p.update(&result).map_err(|e| e.to_string())?;
            }
        }
    }
    ensure!(p.finished() && pending.is_empty(), "proposer did not finish");
    Ok((issued, resumed))
}

fn check_promotions(plan: &BracketPlan, promos: &[Promotion], scores: &BTreeMap<u64, Option<f64>>, resumed: &[u64]) -> Result<usize, String> {
    let (_, oracle) = plan_oracle(plan.max_budget, plan.eta);
    let mut all_promoted = Vec::new();
    for p in promos {
        let bracket = oracle
            .iter()
            .find(|b| b.len() as u32 == p.bracket + 1)
            .ok_or_else(|| format!("unknown bracket {}", p.bracket))?;
        let k = bracket[p.round + 1].n as usize;
        ensure!(p.k == k, "bracket {} round {}: k={} oracle {k}", p.bracket, p.round, p.k);
        for (j, s) in &p.results {
            ensure!(scores.get(j) == Some(s), "promotion saw job {j} score {s:?}, reported {:?}", scores.get(j));
        }
        let want = brute_top_k(&p.results, k);
        ensure!(p.promoted == want, "bracket {} round {}: promoted {:?}, brute force {want:?}", p.bracket, p.round, p.promoted);
        all_promoted.extend(p.promoted.iter().copied());
    }
    let mut a = all_promoted;
    let mut b = resumed.to_vec();
    a.sort();
    b.sort();
    ensure!(a == b, "resume_from ids differ from promoted ids");
    Ok(promos.len())
}

fn ac5() -> Check {
    let start = Instant::now();
    let space = xy_space();
    let bandit = BanditOptions { max_budget: 27, min_budget: 1, eta: 3 };
    let mut checked = 0;
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let state = ProposerState::new(space.clone(), 10_000, trial);
        if trial % 2 == 0 {
            let mut p = HyperBandProposer::new(state, &bandit).map_err(|e| e.to_string())?;
            let (scores, resumed) = drive_bandit(&mut p, &mut rng)?;
            checked += check_promotions(p.plan(), p.promotions(), &scores, &resumed)?;
        } else {
            let opts = BohbOptions { bandit: bandit.clone(), rho: 1.0 / 3.0, min_points: 4, gamma: 0.25, n_candidates: 24 };
            let mut p = BohbProposer::new(state, opts).map_err(|e| e.to_string())?;
            let (scores, resumed) = drive_bandit(&mut p, &mut rng)?;
            checked += check_promotions(p.plan(), p.promotions(), &scores, &resumed)?;
        }
    }
    let t = within(start, 10.0)?;
    Ok(format!("200 assignments, {checked} promotions equal brute-force top-k ({t:.2}s)"))
}

// AC-6 ---------------------------------------------------------------------

/// Independent 3x3 log marginal likelihood by explicit inverse and determinant.
fn lml_oracle(x: &[Vec<f64>], y: &[f64], p: &KernelParams) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let r2: f64 = a.iter().zip(b).zip(&p.length_scales).map(|((u, v), l)| ((u - v) / l).powi(2)).sum();
        p.signal_var * (-0.5 * r2).exp()
    };
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = k(&x[i], &x[j]) + if i == j { p.noise_var } else { 0.0 };
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |i: usize, j: usize| {
        let r: Vec<usize> = (0..3).filter(|&a| a != i).collect();
        let c: Vec<usize> = (0..3).filter(|&a| a != j).collect();
        let minor = m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
        if (i + j) % 2 == 0 { minor } else { -minor }
    };
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += y[i] * cof(j, i) / det * y[j];
        }
    }
    -0.5 * quad - 0.5 * det.ln() - 1.5 * (2.0 * std::f64::consts::PI).ln()
}

fn ac6() -> Check {
    let start = Instant::now();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let phi0 = normal.pdf(0.0);
    ensure!((expected_improvement(0.7, 1.0, 0.7) - phi0).abs() < 1e-12, "EI(mu=f, sigma=1) = {}", expected_improvement(0.7, 1.0, 0.7));
    ensure!(expected_improvement(0.7, 0.0, 0.7) == 0.0, "EI at incumbent with sigma=0 nonzero");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let (mu, sigma, best) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.01..3.0), rng.gen_range(-2.0..2.0));
        let z = (best - mu) / sigma;
        let want = (best - mu) * normal.cdf(z) + sigma * normal.pdf(z);
        let got = expected_improvement(mu, sigma, best);
        ensure!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "EI({mu},{sigma},{best}) {got} vs {want}");
    }

    let floor = 1e-8;
    let (mut worst_resid, mut worst_fd, mut worst_lml) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let x: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ls = vec![rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
        let signal = rng.gen_range(0.5..2.0);

        let gp = GpSurrogate::with_params(x.clone(), &y, KernelParams::new(signal, ls.clone(), floor)).map_err(|e| e.to_string())?;
        for (xi, yi) in x.iter().zip(gp.standardized_targets()) {
            worst_resid = worst_resid.max((gp.predict(xi).0 - yi).abs());
        }

        let params = KernelParams::new(signal, ls, 10f64.powf(rng.gen_range(-3.0..-1.0)));
        let value = log_marginal_likelihood(&x, &y, &params).map_err(|e| e.to_string())?;
        let oracle = lml_oracle(&x, &y, &params);
        worst_lml = worst_lml.max((value - oracle).abs() / oracle.abs().max(1.0));
        let grad = log_marginal_likelihood_grad(&x, &y, &params).map_err(|e| e.to_string())?;
        let theta = params.to_log();
        let h = 1e-5;
        for (i, g) in grad.iter().enumerate() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let f = |t: &[f64]| log_marginal_likelihood(&x, &y, &KernelParams::from_log(t)).unwrap();
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            worst_fd = worst_fd.max((g - fd).abs() / fd.abs().max(1.0));
        }
    }
    ensure!(worst_resid <= 1e-4, "interpolation residual {worst_resid:e}");
    ensure!(worst_fd <= 1e-4, "gradient vs finite difference {worst_fd:e}");
    ensure!(worst_lml <= 1e-9, "log marginal likelihood vs explicit oracle {worst_lml:e}");
    let t = within(start, 30.0)?;
    Ok(format!("residual {worst_resid:.1e}, fd rel {worst_fd:.1e}, lml rel {worst_lml:.1e} over 50 datasets ({t:.2}s)"))
}

// AC-7 ---------------------------------------------------------------------

/// Asymptotic Kolmogorov p-value for statistic `d` on `n` samples.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    (d, ks_p_value(d, xs.len()))
}

fn mixed_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParameterSpec::float("x", -5.0, 10.0).unwrap(),
        ParameterSpec::int("k", -3, 4).unwrap(),
        ParameterSpec::choice("c", ["a", "b", "c"].map(|s| Atom::Str(s.into())).to_vec()).unwrap(),
    ])
    .unwrap()
}

fn ac7() -> Check {
    let start = Instant::now();
    // Startup draws: 250 proposers x 20 startup configs, each fed back.
    let opts = TpeOptions { gamma: 0.25, n_startup: 20, n_candidates: 24 };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for seed in 0..250u64 {
        let mut p = TpeProposer::new(ProposerState::new(xy_space(), 20, seed), opts.clone());
        while let Proposal::Config(c) = p.get_param() {
            let (x, y) = (c.get("x").unwrap().as_f64().unwrap(), c.get("y").unwrap().as_f64().unwrap());
            xs.push(x);
            ys.push(y);
            p.update(&JobResult::finished(c.job_id, rosenbrock(x, y), None, 0.0)).map_err(|e| e.to_string())?;
        }
    }
    ensure!(xs.len() == 5000, "{} startup draws", xs.len());
    let (dx, px) = ks_uniform(xs, -5.0, 10.0);
    let (dy, py) = ks_uniform(ys, -5.0, 10.0);
    ensure!(px > 0.01 && py > 0.01, "KS p-values x={px:.4} (D={dx:.4}) y={py:.4} (D={dy:.4})");

    let space = mixed_space();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut out_of_bounds = 0;
    for h in 0..100 {
        let n = rng.gen_range(2..60usize);
        let gamma = rng.gen_range(0.05..0.95);
        let configs: Vec<JobConfig> = (0..n)
            .map(|j| {
                let v = [
                    ("x".to_string(), ParamValue::Float(rng.gen_range(-5.0..=10.0))),
                    ("k".to_string(), ParamValue::Int(rng.gen_range(-3..=4))),
                    ("c".to_string(), ParamValue::Choice(Atom::Str(["a", "b", "c"][rng.gen_range(0..3)].into()))),
                ];
                JobConfig::new(j as u64, v.into_iter().collect())
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
        let obs: Vec<(&JobConfig, f64)> = configs.iter().zip(scores.iter().copied()).collect();
        let model = TpeModel::fit(&space, &obs, gamma).ok_or("fit returned no model")?;
        // Smallest integer >= gamma * n, kept inside [1, n - 1].
        let mut want = 0;
        while (want as f64) < gamma * n as f64 - 1e-9 {
            want += 1;
        }
        let want = want.clamp(1, n - 1);
        ensure!(model.n_good() == want && model.n_bad() == n - want, "history {h}: n={n} gamma={gamma}: split ({}, {}), want ({want}, {})", model.n_good(), model.n_bad(), n - want);
        ensure!(split_sizes(n, gamma) == (want, n - want), "split_sizes disagrees for n={n} gamma={gamma}");
        for _ in 0..20 {
            let v = model.propose(24, &mut rng);
            let c = JobConfig::new(0, v);
            if c.validate(&space).is_err() {
                out_of_bounds += 1;
            }
        }
    }
    ensure!(out_of_bounds == 0, "{out_of_bounds} proposals out of bounds");

    // Full proposer past startup on the mixed space.
    let mut p = TpeProposer::new(ProposerState::new(space.clone(), 200, 9), TpeOptions { n_startup: 10, ..opts });
    while let Proposal::Config(c) = p.get_param() {
        c.validate(&space).map_err(|e| format!("job {} out of bounds: {e}", c.job_id))?;
        let x = c.get("x").unwrap().as_f64().unwrap();
        p.update(&JobResult::finished(c.job_id, (x - 2.0).powi(2), None, 0.0)).map_err(|e| e.to_string())?;
    }
    let t = within(start, 60.0)?;
    Ok(format!("KS p x={px:.3} y={py:.3}; 100 splits match; 2000+200 proposals in bounds ({t:.2}s)"))
}

// AC-8 ---------------------------------------------------------------------

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Straight-loop random search with the pinned generator family.
fn straight_loop(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n {
        let x: f64 = rng.gen_range(-5.0..=10.0);
        let y: f64 = rng.gen_range(-5.0..=10.0);
        best = best.min(rosenbrock(x, y));
    }
    best
}

fn ac8() -> Check {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let threshold = median(seeds.iter().map(|&s| straight_loop(s, 200)).collect());
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 4);
    let bench = BenchConfig {
        experiment: rosenbrock_doc(ROSENBROCK, "random", 200, 4, json!({"random_seed": 0})),
        seeds,
        min_value: Some(0.0),
    };
    let table = run_benchmark(&bench, &env).map_err(|e| e.to_string())?;
    ensure!(table.runs.len() == 20 && table.runs.iter().all(|r| r.n_finished == 200), "incomplete runs");
    let got = table.median_best().ok_or("no finished jobs")?;
    ensure!(got <= threshold * 1.1, "median best {got} exceeds oracle {threshold} by more than 10%");
    ensure!(got < 5.0, "median best {got} not below 5.0");
    let t = within(start, 120.0)?;
    Ok(format!("median best {got:.4} vs oracle {threshold:.4}, 4000 subprocess evals ({t:.1}s)"))
}

// AC-9 ---------------------------------------------------------------------

struct LiveLine {
    job: u64,
    status: String,
    score: Option<f64>,
}

fn parse_done(line: &str) -> Option<LiveLine> {
    let rest = line.strip_prefix("done ")?;
    let mut job = None;
    let mut status = None;
    let mut score = None;
    for part in rest.split(' ') {
        if let Some(v) = part.strip_prefix("job=") {
            job = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("status=") {
            status = Some(v.to_string());
        } else if let Some(v) = part.strip_prefix("score=") {
            score = v.parse().ok();
        }
    }
    Some(LiveLine { job: job?, status: status?, score })
}

fn ac9() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 2);
    let env_path = tmp.path().join("aup_env.json");
    std::fs::write(&env_path, env.to_json_string()).map_err(|e| e.to_string())?;
    let cfg_path = tmp.path().join("experiment.json");
    let doc = rosenbrock_doc(ROSENBROCK, "random", 500, 2, json!({"random_seed": 9}));
    std::fs::write(&cfg_path, doc.to_string()).map_err(|e| e.to_string())?;

    let mut child = Command::new(AUP)
        .arg("--env")
        .arg(&env_path)
        .arg("run")
        .arg(&cfg_path)
        .env("AUP_OBJECTIVE_DELAY_MS", "60")
        .env_remove("AUP_DB")
        .env_remove("AUP_WORKDIR")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let mut live = Vec::new();
    let mut line = String::new();
    while live.len() < 20 {
        line.clear();
        if reader.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("run ended before the kill point".into());
        }
        if let Some(l) = parse_done(line.trim_end()) {
            live.push(l);
        }
    }
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    let live_best = live.iter().filter_map(|l| l.score).fold(f64::INFINITY, f64::min);
    let live_finished = live.iter().filter(|l| l.status == "finished").count();

    let store = Store::open(&env.database).map_err(|e| e.to_string())?;
    store.integrity_check().map_err(|e| e.to_string())?;
    let recovered = store.recover_orphans().map_err(|e| e.to_string())?;
    ensure!(recovered == vec![1], "recovered experiments {recovered:?}");
    let exp = store.experiment(1).map_err(|e| e.to_string())?;
    ensure!(exp.status == ExperimentStatus::Failed, "experiment status {}", exp.status);
    let cfg = exp.config().map_err(|e| e.to_string())?;
    let jobs = store.jobs(1).map_err(|e| e.to_string())?;
    for j in &jobs {
        let c = JobConfig::load(&j.job_config, &cfg.space).map_err(|e| format!("job {} config corrupt: {e}", j.jid))?;
        ensure!(c.job_id == j.jid, "row {} holds config for job {}", j.jid, c.job_id);
        match j.status {
            JobState::Finished => {
                let s = j.score.ok_or(format!("finished job {} without score", j.jid))?;
                let want = rosenbrock(c.get("x").unwrap().as_f64().unwrap(), c.get("y").unwrap().as_f64().unwrap());
                ensure!(s == want, "job {} score {s} != {want}", j.jid);
                ensure!(j.end_time.is_some_and(|e| e >= j.start_time), "job {} end time", j.jid);
            }
            JobState::Failed | JobState::Killed => ensure!(j.score.is_none(), "job {} unfinished with score", j.jid),
            JobState::Interrupted => ensure!(j.score.is_none() && j.end_time.is_some(), "interrupted job {} row", j.jid),
            JobState::Running => return Err(format!("job {} still running after recovery", j.jid)),
        }
    }
    for l in &live {
        let j = jobs.iter().find(|j| j.jid == l.job).ok_or(format!("completed job {} missing", l.job))?;
        ensure!(j.status.as_str() == l.status, "job {} status {} vs live {}", l.job, j.status, l.status);
        ensure!(j.score == l.score, "job {} score {:?} vs live {:?}", l.job, j.score, l.score);
    }
    let summary = summarize(&store, 1).map_err(|e| e.to_string())?;
    let subset_best = jobs
        .iter()
        .filter(|j| live.iter().any(|l| l.job == j.jid))
        .filter_map(|j| j.score)
        .fold(f64::INFINITY, f64::min);
    ensure!(subset_best == live_best, "stored best on completed subset {subset_best} vs live {live_best}");
    let extra = summary.n_finished - live_finished;
    ensure!(extra <= 2, "{extra} finished jobs beyond the printed ones");
    ensure!(summary.best.as_ref().is_some_and(|b| b.score <= live_best), "summary best worse than live");
    ensure!(summary.n_running == 0, "{} jobs running after recovery", summary.n_running);
    ensure!(summary.n_jobs == jobs.len(), "summary job count");
    let t = within(start, 30.0)?;
    Ok(format!(
        "{} rows intact, {} completed before kill all present, {} interrupted ({t:.1}s)",
        jobs.len(),
        live.len(),
        summary.n_interrupted
    ))
}

// AC-10 --------------------------------------------------------------------

const OVERHEAD_S: f64 = 2.0;

fn ac10() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = env_in(tmp.path(), 8);
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for n_parallel in [1usize, 2, 4, 8] {
        let cfg = experiment(json!({
            "proposer": "random",
            "script": SLEEP,
            "n_parallel": n_parallel,
            "parameter_config": [{"name": "sleep", "range": [1.0, 1.0], "type": "float"}],
            "n_samples": 64,
            "proposer_options": {"random_seed": 0}
        }));
        let t0 = Instant::now();
        let mut exp = Experiment::create(cfg, &env, RunOptions::default()).map_err(|e| e.to_string())?;
        let summary = exp.run(&mut |_| {}).map_err(|e| e.to_string())?;
        let wall = t0.elapsed().as_secs_f64();
        ensure!(summary.n_finished == 64, "p={n_parallel}: {} finished", summary.n_finished);
        let ideal = 64.0 / n_parallel as f64;
        let ok = wall >= ideal && wall <= 1.25 * ideal + OVERHEAD_S;
        notes.push(format!("p={n_parallel} {wall:.1}s/{ideal:.0}s"));
        if !ok {
            failures.push(format!("p={n_parallel}: {wall:.2}s outside [{ideal:.0}, {:.1}]", 1.25 * ideal + OVERHEAD_S));
        }
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    let t = within(start, 180.0)?;
    Ok(format!("{} ({t:.0}s)", notes.join(", ")))
}

fn report(n: usize, r: std::thread::Result<Check>) -> bool {
    match r {
        Ok(Ok(msg)) => {
            println!("[PASS] AC-{n}: {msg}");
            true
        }
        Ok(Err(msg)) => {
            println!("[FAIL] AC-{n}: {msg}");
            false
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("[FAIL] AC-{n}: panicked: {msg}");
            false
        }
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Sleep jobs barely use the CPU, so the scaling run overlaps the rest.
    let scaling = std::thread::spawn(ac10);
    let checks: [fn() -> Check; 9] = [ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9];
    let mut all = true;
    for (i, check) in checks.iter().enumerate() {
        all &= report(i + 1, std::panic::catch_unwind(check));
    }
    all &= report(10, scaling.join());
    if !all {
        std::process::exit(1);
    }
}
