use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_maskmpc");

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn maskmpc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn spawn(args: &[&str]) -> Child {
    Command::new(BIN)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let ports: Vec<u16> = (0..4).map(|_| free_port()).collect();
    let text = format!(
        "session = 5\nseed = 17\nnetwork = logreg\nbatch = 2\nruns = 2\n\
         s0 = 127.0.0.1:{}\ns1 = 127.0.0.1:{}\ns2 = 127.0.0.1:{}\nreceiver.client = 127.0.0.1:{}\n\
         input_provider = client\nmodel_owner = client\noutput_receiver = client\n\
         images = images.idx\nweights = logreg.weights\ntimeout_secs = 60\n{extra}",
        ports[0], ports[1], ports[2], ports[3]
    );
    let path = dir.join("session.conf");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn prepare(dir: &Path) {
    let d = dir.display().to_string();
    assert!(maskmpc(&["fixture", "--dir", &d, "--count", "8", "--seed", "3"]).status.success());
    let w = dir.join("logreg.weights").display().to_string();
    assert!(maskmpc(&["weights", "--network", "logreg", "--seed", "4", "--out", &w]).status.success());
}

fn stdout_lines(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect()
}

#[test]
fn five_process_tcp_session_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let config = write_config(dir.path(), "");
    let stats = dir.path().join("s0.csv").display().to_string();
    let mut children = vec![
        spawn(&["party", "--role", "s0", "--config", &config, "--stats-out", &stats]),
        spawn(&["party", "--role", "s1", "--config", &config]),
        spawn(&["party", "--role", "s2", "--config", &config]),
        spawn(&["party", "--role", "receiver:client", "--config", &config]),
    ];
    children.push(spawn(&["party", "--role", "provider:client", "--config", &config]));
    let outputs: Vec<Output> = children.into_iter().map(|c| c.wait_with_output().unwrap()).collect();
    for out in &outputs {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let tcp = stdout_lines(&outputs[3]);
    assert!(tcp.iter().any(|l| l.starts_with("run 1 probs 1 ")), "{tcp:?}");

    let local = maskmpc(&["party", "--config", &config, "--transport", "inmemory"]);
    assert!(local.status.success(), "{}", String::from_utf8_lossy(&local.stderr));
    assert_eq!(tcp, stdout_lines(&local));

    let csv = std::fs::read_to_string(&stats).unwrap();
    assert!(csv.starts_with("phase,sender,receiver"));
    assert!(csv.lines().any(|l| l.starts_with("online,s0,s1,")));
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "network = logreg\ns1 = 127.0.0.1:1\n").unwrap();
    let out = maskmpc(&["party", "--role", "s0", "--config", &path.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no address"));

    std::fs::write(&path, "backend = int100\ntrunc = local\n").unwrap();
    let out = maskmpc(&["party", "--role", "s0", "--config", &path.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));

    let out = maskmpc(&["party", "--role", "s9", "--config", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn local_predict_and_fit() {
    let out = maskmpc(&["predict", "--network", "A", "--batch", "2", "--seed", "1", "--backend", "int100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    assert!(lines.iter().any(|l| l.starts_with("probs 1 ")));

    let out = maskmpc(&["fit-relu", "--degree", "2", "--interval", "-2", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_error"));
}
