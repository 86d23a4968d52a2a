use std::io::{Read, Write};
use std::net::{TcpStream, UdpSocket};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smarthouse"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn zero_duration_is_a_usage_error() {
    let out = run(&["sim", "--duration", "0s"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration"));
}

#[test]
fn bad_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sim": {"nodes": [{"id": 0, "room": 1, "position": [0, 0]}], "rooms": [{}]}}"#).unwrap();
    let out = run(&["sim", "--config", path(&cfg), "--duration", "1min"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn sim_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for tag in ["a", "b"] {
        let out = run(&[
            "sim",
            "--seed",
            "7",
            "--duration",
            "3h",
            "--lvm",
            path(&p(&format!("{tag}.lvm"))),
            "--summary",
            path(&p(&format!("{tag}.json"))),
            "--stream-out",
            path(&p(&format!("{tag}.bin"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for ext in ["json", "bin", "lvm"] {
        let a = std::fs::read(p(&format!("a.{ext}"))).unwrap();
        let b = std::fs::read(p(&format!("b.{ext}"))).unwrap();
        assert!(!a.is_empty());
        assert!(a == b, "{ext} differs between identical runs");
    }
    let summary = json(&p("a.json"));
    assert_eq!(summary["co_activations"], 0);
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["rooms"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(p("a.lvm")).unwrap().starts_with("LabVIEW Measurement\n"));

    // A different seed changes the stream.
    let out = run(&["sim", "--seed", "8", "--duration", "3h", "--summary", path(&p("c.json")), "--stream-out", path(&p("c.bin"))]);
    assert!(out.status.success());
    assert_ne!(std::fs::read(p("a.bin")).unwrap(), std::fs::read(p("c.bin")).unwrap());
}

#[test]
fn summary_goes_to_stdout_by_default() {
    let out = run(&["sim", "--duration", "2min"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["duration_s"], 120.0);
}

#[test]
fn replay_of_recorded_stream() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.bin");
    assert!(run(&["sim", "--duration", "30min", "--stream-out", path(&stream), "--summary", path(&dir.path().join("s.json"))])
        .status
        .success());
    let summary = json(&dir.path().join("s.json"));

    let snap = dir.path().join("snap.json");
    let out = run(&["replay", path(&stream), "--snapshot", path(&snap)]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let delivered = summary["frames"]["data_delivered"].as_u64().unwrap()
        + summary["frames"]["health_delivered"].as_u64().unwrap();
    assert_eq!(stats["frames_decoded"].as_u64().unwrap(), delivered);
    assert_eq!(stats["rejected"], 0);
    let rooms = json(&snap);
    assert_eq!(rooms.as_array().unwrap().len(), 3);
    assert!(rooms.as_array().unwrap().iter().all(|r| !r["reading"].is_null()));

    // Corrupt the tail: still exit 0, rejects counted.
    let mut bytes = std::fs::read(&stream).unwrap();
    let n = bytes.len();
    for b in &mut bytes[n - 30..n - 1] {
        *b ^= 0x55;
    }
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &bytes).unwrap();
    let out = run(&["replay", path(&bad)]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stats["rejected"].as_u64().unwrap() >= 1);
}

#[test]
fn replay_of_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.bin");
    std::fs::write(&empty, b"").unwrap();
    let out = run(&["replay", path(&empty)]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["frames_decoded"], 0);
    assert_eq!(stats["bytes"], 0);
}

#[test]
fn replay_of_missing_file_fails() {
    let out = run(&["replay", "/definitely/not/here.bin"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sim_pipes_into_gateway() {
    let mut sim = bin()
        .args(["sim", "--duration", "5min", "--stream-out", "-", "--summary", "/dev/null"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let gw = bin()
        .args(["gateway", "--input", "-"])
        .stdin(sim.stdout.take().unwrap())
        .output()
        .unwrap();
    assert!(sim.wait().unwrap().success());
    assert!(gw.status.success(), "{}", String::from_utf8_lossy(&gw.stderr));
    let v: serde_json::Value = serde_json::from_slice(&gw.stdout).unwrap();
    // 30 samples per node in five minutes, plus 3 health reports each.
    assert_eq!(v["stats"]["readings"], 90);
    assert_eq!(v["stats"]["health_reports"], 9);
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn free_udp_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http(port: u16, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn engine_serves_udp_and_http() {
    let (udp, tcp) = (free_udp_port(), free_port());
    let mut child = bin()
        .args(["engine", "--engine-port", &udp.to_string(), "--bridge-port", &tcp.to_string()])
        .spawn()
        .unwrap();
    let get = "GET /api/vars HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n";
    let deadline = Instant::now() + Duration::from_secs(10);
    while http(tcp, get).is_none() {
        assert!(Instant::now() < deadline, "bridge did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }

    // Publish "room1.temperature" = 24.4 with the raw datagram format.
    let name = b"room1.temperature";
    let mut dgram = b"SVE1".to_vec();
    dgram.extend_from_slice(&[1, name.len() as u8]);
    dgram.extend_from_slice(name);
    dgram.push(1);
    dgram.extend_from_slice(&24.4f64.to_be_bytes());
    dgram.extend_from_slice(&123u64.to_be_bytes());
    dgram.extend_from_slice(&1u32.to_be_bytes());
    assert_eq!(dgram.len(), 27 + name.len());
    UdpSocket::bind("127.0.0.1:0").unwrap().send_to(&dgram, ("127.0.0.1", udp)).unwrap();

    let mut body = String::new();
    while !body.contains("room1.temperature") {
        assert!(Instant::now() < deadline, "publish never showed up: {body}");
        std::thread::sleep(Duration::from_millis(20));
        body = http(tcp, get).unwrap_or_default();
    }
    assert!(body.contains(r#""room1.temperature":{"value":24.4,"timestamp_us":123,"seq":1}"#), "{body}");

    let post_body = r#"{"value": 23}"#;
    let post = format!(
        "POST /api/vars/room1.setpoint HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{post_body}",
        post_body.len()
    );
    let res = http(tcp, &post).unwrap();
    assert!(res.starts_with("HTTP/1.1 200"), "{res}");
    assert!(http(tcp, get).unwrap().contains("room1.setpoint"));
    child.kill().unwrap();
    child.wait().unwrap();
}
