use aup_core::resources::{
    format_result_line, job_dir, submit_result, RemoteConfig, ResourceDecl, ResourcePool, Runner,
};
use aup_core::space::{JobConfig, JobResult, JobStatus, ParamValue, ParameterSpec, ResourceType, SearchSpace};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn job(id: u64, x: f64) -> JobConfig {
    JobConfig::new(id, [("x".to_string(), ParamValue::Float(x))].into_iter().collect())
}

fn decl(rtype: ResourceType, locator: &str) -> ResourceDecl {
    ResourceDecl { rtype, locator: locator.into() }
}

fn runner(pool: Arc<ResourcePool>, script: PathBuf, workdir: &Path) -> Runner {
    Runner { pool, eid: 7, script, workdir: workdir.to_path_buf(), timeout: None, remote: RemoteConfig::default() }
}

fn run_one(r: &Runner, rtype: ResourceType, j: &JobConfig) -> JobResult {
    let slot = r.pool.get_available(rtype).unwrap().expect("free slot");
    let (tx, rx) = mpsc::channel();
    let h = r.run(j, &slot, move |res| tx.send(res).unwrap()).unwrap();
    let res = rx.recv_timeout(Duration::from_secs(20)).expect("completion");
    h.join();
    res
}

#[test]
fn successful_job_reports_score_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "ok.sh", "echo training; echo \"#AUP_RESULT:1.25,job=$AUP_JOB_ID;exp=$AUP_EXPERIMENT_ID\"; echo oops >&2");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let r = runner(pool.clone(), s, tmp.path());
    let res = run_one(&r, ResourceType::Cpu, &job(3, 0.5));
    assert_eq!(res.status, JobStatus::Finished);
    assert_eq!(res.score, Some(1.25));
    assert_eq!(res.aux_string.as_deref(), Some("job=3;exp=7"));
    let dir = job_dir(tmp.path(), 7, 3);
    assert!(fs::read_to_string(dir.join("stdout.txt")).unwrap().contains("training"));
    assert_eq!(fs::read_to_string(dir.join("stderr.txt")).unwrap().trim(), "oops");
    let space = SearchSpace::new(vec![ParameterSpec::float("x", 0.0, 1.0).unwrap()]).unwrap();
    let cfg = JobConfig::load(&fs::read_to_string(dir.join("config.json")).unwrap(), &space).unwrap();
    assert_eq!(cfg, job(3, 0.5));
    assert_eq!(pool.busy(), 0);
}

#[test]
fn failures_are_classified() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("nonzero.sh", "echo '#AUP_RESULT:1.0'; exit 3"),
        ("noline.sh", "echo nothing here"),
        ("nan.sh", "echo '#AUP_RESULT:nan'"),
        ("garbage.sh", "echo '#AUP_RESULT:abc'"),
    ];
    for (name, body) in cases {
        let s = script(tmp.path(), name, body);
        let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
        let res = run_one(&runner(pool.clone(), s, tmp.path()), ResourceType::Cpu, &job(0, 0.0));
        assert_eq!(res.status, JobStatus::Failed, "{name}");
        assert_eq!(res.score, None, "{name}");
        assert_eq!(pool.busy(), 0);
    }
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let res = run_one(&runner(pool, tmp.path().join("missing.sh"), tmp.path()), ResourceType::Cpu, &job(1, 0.0));
    assert_eq!(res.status, JobStatus::Failed);
}

#[test]
fn last_result_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "two.sh", "echo '#AUP_RESULT:5'; echo '#AUP_RESULT:2'");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let res = run_one(&runner(pool, s, tmp.path()), ResourceType::Cpu, &job(0, 0.0));
    assert_eq!(res.score, Some(2.0));
}

#[test]
fn timeout_kills_the_job() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "slow.sh", "exec sleep 30");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let mut r = runner(pool.clone(), s, tmp.path());
    r.timeout = Some(Duration::from_millis(200));
    let t = Instant::now();
    let res = run_one(&r, ResourceType::Cpu, &job(0, 0.0));
    assert_eq!(res.status, JobStatus::Killed);
    assert!(t.elapsed() < Duration::from_secs(10));
    assert_eq!(pool.busy(), 0);
}

#[test]
fn explicit_kill() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "slow.sh", "exec sleep 30");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let r = runner(pool.clone(), s, tmp.path());
    let slot = pool.get_available(ResourceType::Cpu).unwrap().unwrap();
    let (tx, rx) = mpsc::channel();
    let h = r.run(&job(0, 0.0), &slot, move |res| tx.send(res).unwrap()).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    assert!(!h.is_done());
    h.kill();
    let res = rx.recv_timeout(Duration::from_secs(10)).unwrap();
    assert_eq!(res.status, JobStatus::Killed);
    h.join();
}

#[test]
fn gpu_slot_sets_visible_devices() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "gpu.sh", "echo \"#AUP_RESULT:$CUDA_VISIBLE_DEVICES,dev=$CUDA_VISIBLE_DEVICES\"");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Gpu, "3")]));
    let res = run_one(&runner(pool, s, tmp.path()), ResourceType::Gpu, &job(0, 0.0));
    assert_eq!(res.score, Some(3.0));
    assert_eq!(res.aux_string.as_deref(), Some("dev=3"));

    let s = script(tmp.path(), "cpu.sh", "echo \"#AUP_RESULT:1,dev=${CUDA_VISIBLE_DEVICES:-unset}\"");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Cpu, "0")]));
    let mut r = runner(pool, s, tmp.path());
    r.eid = 8;
    std::env::remove_var("CUDA_VISIBLE_DEVICES");
    let res = run_one(&r, ResourceType::Cpu, &job(0, 0.0));
    assert_eq!(res.aux_string.as_deref(), Some("dev=unset"));
}

#[test]
fn node_slot_copies_config_and_runs_remote() {
    let tmp = tempfile::tempdir().unwrap();
    let remote_root = tmp.path().join("remote");
    fs::create_dir_all(&remote_root).unwrap();
    let log = tmp.path().join("calls.log");
    // Fake copy: `copy <src> <host>:<dst>` copies into remote_root/<host>/<dst>.
    let copy = script(
        tmp.path(),
        "fake-scp",
        &format!(
            "echo \"copy $@\" >> {log}\nhost=${{2%%:*}}\ndst=${{2#*:}}\nmkdir -p {root}/$host$(dirname $dst)\ncp \"$1\" {root}/$host$dst",
            log = log.display(),
            root = remote_root.display()
        ),
    );
    // Fake shell: `shell <host> <script> <path>` runs the script against the copied file.
    let shell = script(
        tmp.path(),
        "fake-ssh",
        &format!(
            "echo \"shell $@\" >> {log}\nhost=$1\nshift\n\"$1\" {root}/$host$2",
            log = log.display(),
            root = remote_root.display()
        ),
    );
    let train = script(tmp.path(), "train.sh", "grep -q '\"job_id\": 4' \"$1\" && echo '#AUP_RESULT:0.5,remote=yes'");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Node, "box1")]));
    let mut r = runner(pool, train.clone(), tmp.path());
    r.remote = RemoteConfig {
        shell: shell.to_string_lossy().into(),
        copy: copy.to_string_lossy().into(),
        remote_dir: "/scratch".into(),
    };
    let res = run_one(&r, ResourceType::Node, &job(4, 1.0));
    assert_eq!(res.status, JobStatus::Finished, "{}", fs::read_to_string(&log).unwrap_or_default());
    assert_eq!(res.score, Some(0.5));
    assert!(remote_root.join("box1/scratch/7_4.json").is_file());
    let calls = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = calls.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("copy ") && lines[0].ends_with("box1:/scratch/7_4.json"));
    assert_eq!(lines[1], format!("shell box1 {} /scratch/7_4.json", train.display()));
}

#[test]
fn node_copy_failure_fails_job() {
    let tmp = tempfile::tempdir().unwrap();
    let train = script(tmp.path(), "train.sh", "echo '#AUP_RESULT:1'");
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Node, "box1")]));
    let mut r = runner(pool.clone(), train, tmp.path());
    r.remote.copy = "/bin/false".into();
    let res = run_one(&r, ResourceType::Node, &job(0, 0.0));
    assert_eq!(res.status, JobStatus::Failed);
    assert_eq!(pool.busy(), 0);
}

#[test]
fn passive_slot_waits_for_submission() {
    let tmp = tempfile::tempdir().unwrap();
    let pool = Arc::new(ResourcePool::new(&[decl(ResourceType::Passive, "p0")]));
    let r = runner(pool.clone(), PathBuf::from("/nonexistent"), tmp.path());
    let slot = pool.get_available(ResourceType::Passive).unwrap().unwrap();
    let (tx, rx) = mpsc::channel();
    let h = r.run(&job(2, 0.0), &slot, move |res| tx.send(res).unwrap()).unwrap();
    assert!(rx.recv_timeout(Duration::from_millis(150)).is_err());
    assert!(submit_result(tmp.path(), 7, 99, "#AUP_RESULT:1").is_err());
    submit_result(tmp.path(), 7, 2, &format_result_line(0.75, Some("by=hand")).unwrap()).unwrap();
    let res = rx.recv_timeout(Duration::from_secs(10)).unwrap();
    assert_eq!(res.status, JobStatus::Finished);
    assert_eq!(res.score, Some(0.75));
    assert_eq!(res.aux_string.as_deref(), Some("by=hand"));
    h.join();
}

#[test]
fn callbacks_fire_once_and_slots_balance() {
    let tmp = tempfile::tempdir().unwrap();
    let s = script(tmp.path(), "quick.sh", "echo \"#AUP_RESULT:$AUP_JOB_ID\"");
    let decls: Vec<_> = (0..3).map(|i| decl(ResourceType::Cpu, &i.to_string())).collect();
    let pool = Arc::new(ResourcePool::new(&decls));
    let r = runner(pool.clone(), s, tmp.path());
    let fired = Arc::new(AtomicUsize::new(0));
    let (tx, rx) = mpsc::channel();
    let mut handles = Vec::new();
    for id in 0..12u64 {
        let slot = pool.wait_available(ResourceType::Cpu, Duration::from_secs(20)).unwrap().unwrap();
        let (tx, fired) = (tx.clone(), fired.clone());
        handles.push(r.run(&job(id, 0.0), &slot, move |res| {
            fired.fetch_add(1, Ordering::SeqCst);
            tx.send(res).unwrap();
        }).unwrap());
    }
    drop(tx);
    let mut ids: Vec<u64> = rx.iter().map(|res| {
        assert_eq!(res.score, Some(res.job_id as f64));
        res.job_id
    }).collect();
    for h in handles {
        h.join();
    }
    ids.sort();
    assert_eq!(ids, (0..12).collect::<Vec<_>>());
    assert_eq!(fired.load(Ordering::SeqCst), 12);
    assert_eq!(pool.busy(), 0);
    assert!(pool.max_busy() <= 3);
}
