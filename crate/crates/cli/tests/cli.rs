use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;
use tpivot_core::synth::{generate_dataset, SynthParams};

fn tpivot() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tpivot"));
    cmd.env_remove("VLM_API_KEY");
    cmd
}

fn dataset(dir: &Path, videos: usize, tasks: usize, seed: u64) -> PathBuf {
    let params = SynthParams {
        videos,
        fps: 2.0,
        min_tasks: tasks,
        max_tasks: tasks,
        min_duration_s: 40.0,
        max_duration_s: 60.0,
        frame_size: (32, 24),
        uniform: false,
        seed,
    };
    let data = dir.join("data");
    generate_dataset(&data, &params).unwrap();
    data
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[derive(Debug, Clone)]
struct Request {
    headers: String,
    body: Value,
}

/// Minimal chat-completions server: answers scripted statuses first, then
/// 200 with a fixed label, one request per connection.
struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    fn start(script: Vec<u16>, label: u32) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    headers.push_str(&line);
                }
                let len = headers
                    .lines()
                    .find_map(|l| {
                        let (k, v) = l.split_once(':')?;
                        k.eq_ignore_ascii_case("content-length").then(|| v.trim().parse::<usize>().ok())?
                    })
                    .unwrap_or(0);
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Request {
                    headers: headers.to_ascii_lowercase(),
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });

                let status = script.next().unwrap_or(200);
                let (reason, payload) = if status == 200 {
                    let content = format!("I pick frame {label}. {{\"points\": [{label}]}}");
                    ("OK", serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string())
                } else {
                    ("Error", "{\"error\": \"scripted\"}".to_string())
                };
                let resp = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nRetry-After: 0\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Self { url, requests }
    }

    fn requests(&self) -> Vec<Request> {
        self.requests.lock().unwrap().clone()
    }
}

fn fast_http_config(dir: &Path, retries: u32) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!("[http]\nbackoff_base_ms = 1\nrequests_per_second = 0\nmax_retries = {retries}\ntimeout_s = 10\n"),
    )
    .unwrap();
    path
}

fn http_localize(dir: &Path, server: &MockServer, video: &Path, out: &Path, retries: u32) -> Command {
    let mut cmd = tpivot();
    cmd.arg("localize")
        .arg(video)
        .args(["--backend", "http", "--tasks", "a,b", "--grid", "2x2", "--iterations", "1", "--canvas-px", "64"])
        .args(["--endpoint", &server.url])
        .arg("--config")
        .arg(fast_http_config(dir, retries))
        .arg("--out")
        .arg(out)
        .env("VLM_API_KEY", "test-key");
    cmd
}

#[test]
fn http_wire_format_and_429_retry() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 2, 1);
    let server = MockServer::start(vec![429], 2);
    let out = dir.path().join("r.json");
    let res = http_localize(dir.path(), &server, &data.join("synth_000"), &out, 3).output().unwrap();
    assert!(res.status.success(), "{}", stderr(&res));

    let reqs = server.requests();
    // 2 tasks x 2 boundaries x 2 passes, plus the retried 429.
    assert_eq!(reqs.len(), 9);
    let r = &reqs[1];
    assert!(r.headers.contains("authorization: bearer test-key"));
    assert_eq!(r.body["model"], "gpt-4o");
    assert_eq!(r.body["temperature"], 0.0);
    let content = &r.body["messages"][0]["content"];
    assert!(content[0]["text"].as_str().unwrap().contains("{\"points\": []}"));
    let image = &content[1]["image_url"];
    assert!(image["url"].as_str().unwrap().starts_with("data:image/jpeg;base64,"));
    assert_eq!(image["detail"], "high");

    let rec = json(&out);
    assert_eq!(rec["transitions"].as_array().unwrap().len(), 1);
    assert_eq!(rec["meta"]["config"]["http"]["endpoint"], server.url.as_str());
    assert!(!fs::read_to_string(&out).unwrap().contains("test-key"));
}

#[test]
fn record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 2, 2);
    let video = data.join("synth_000");
    let server = MockServer::start(vec![], 3);
    let store = dir.path().join("store.jsonl");
    let recorded = dir.path().join("recorded.json");
    let res = http_localize(dir.path(), &server, &video, &recorded, 3)
        .arg("--record-store")
        .arg(&store)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let served = server.requests().len();

    let replayed = dir.path().join("replayed.json");
    let res = tpivot()
        .arg("localize")
        .arg(&video)
        .args(["--backend", "replay", "--tasks", "a,b", "--grid", "2x2", "--iterations", "1", "--canvas-px", "64"])
        .arg("--replay-store")
        .arg(&store)
        .arg("--out")
        .arg(&replayed)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(server.requests().len(), served, "replay must not hit the network");
    assert_eq!(json(&recorded)["transitions"], json(&replayed)["transitions"]);
    assert_eq!(json(&recorded)["boundaries"], json(&replayed)["boundaries"]);

    // A different grid asks different questions: every search misses.
    let res = tpivot()
        .arg("localize")
        .arg(&video)
        .args(["--backend", "replay", "--tasks", "a,b", "--grid", "3x3", "--iterations", "1", "--canvas-px", "64"])
        .arg("--replay-store")
        .arg(&store)
        .arg("--out")
        .arg(dir.path().join("miss.json"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
}

#[test]
fn persistent_server_errors_fall_back_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 2, 3);
    let server = MockServer::start(vec![500; 100], 1);
    let out = dir.path().join("r.json");
    let res = http_localize(dir.path(), &server, &data.join("synth_000"), &out, 1).output().unwrap();
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
    let rec = json(&out);
    let d = rec["duration_s"].as_f64().unwrap();
    assert_eq!(rec["transitions"][0].as_f64().unwrap(), d / 2.0);
    assert_eq!(rec["boundaries"][0]["start"]["failed"], true);
}

#[test]
fn missing_api_key_fails_before_decoding() {
    let dir = tempfile::tempdir().unwrap();
    let res = tpivot()
        .arg("localize")
        .arg(dir.path().join("does-not-exist.mp4"))
        .args(["--backend", "http", "--tasks", "grasp,move,place"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = stderr(&res);
    assert!(err.contains("VLM_API_KEY"), "{err}");
    assert!(!err.contains("does-not-exist"), "{err}");
}

#[test]
fn oracle_localize_with_debug_grids() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 3, 4);
    let out = dir.path().join("r.json");
    let grids = dir.path().join("grids");
    let res = tpivot()
        .arg("localize")
        .arg(data.join("synth_000"))
        .arg("--annotations")
        .arg(data.join("synth_000.json"))
        .args(["--backend", "oracle", "--grid", "3x3", "--canvas-px", "96", "--workers", "2"])
        .arg("--debug-grids")
        .arg(&grids)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let rec = json(&out);
    let truth = json(&data.join("synth_000.json"));
    let tr = rec["transitions"].as_array().unwrap();
    assert_eq!(tr.len(), 2);
    for (i, t) in tr.iter().enumerate() {
        let want = truth["segments"][i + 1]["start_s"].as_f64().unwrap();
        assert!((t.as_f64().unwrap() - want).abs() <= 0.5, "{t} vs {want}");
    }
    assert_eq!(rec["meta"]["config"]["backend"], "oracle");
    assert!(rec["meta"].get("wall_clock_s").is_none());
    // 3 tasks x 2 boundaries x 5 passes, each a png plus a json sidecar.
    assert_eq!(fs::read_dir(&grids).unwrap().count(), 60);
    assert!(grids.join("task02_start_pass0.png").is_file());
    assert!(grids.join("task02_start_pass0.json").is_file());
}

#[test]
fn oracle_requires_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 2, 5);
    let res = tpivot()
        .arg("localize")
        .arg(data.join("synth_000"))
        .args(["--backend", "oracle", "--tasks", "a,b"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("--annotations"));
}

#[test]
fn split_segments_localize() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 3, 6);
    let out = dir.path().join("r.json");
    let res = tpivot()
        .arg("localize")
        .arg(data.join("synth_000"))
        .arg("--annotations")
        .arg(data.join("synth_000.json"))
        .args(["--backend", "oracle", "--grid", "3x3", "--canvas-px", "96", "--split-segments", "4"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let rec = json(&out);
    let truth = json(&data.join("synth_000.json"));
    for i in 0..2 {
        let got = rec["transitions"][i].as_f64().unwrap();
        let want = truth["segments"][i + 1]["start_s"].as_f64().unwrap();
        assert!((got - want).abs() <= 0.5, "{got} vs {want}");
    }
}

#[test]
fn evaluate_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty");
    fs::create_dir(&data).unwrap();
    let out = dir.path().join("out");
    let res = tpivot()
        .arg("evaluate")
        .arg(&data)
        .args(["--backend", "oracle"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("baseline,"));
}

#[test]
fn evaluate_partial_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 2, 3, 7);
    fs::remove_dir_all(data.join("synth_001")).unwrap();
    let out = dir.path().join("out");
    let res = tpivot()
        .arg("evaluate")
        .arg(&data)
        .args(["--backend", "oracle", "--grid", "3x3", "--style", "original,spacing", "--canvas-px", "96"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    let report = json(&out.join("report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["report"]["videos"], 1);
    assert!(out.join("groups.csv").is_file());
    assert!(out.join("records/3x3_spacing/synth_000.json").is_file());
}

#[test]
fn invalid_config_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "iterations = 99\n").unwrap();
    let res = tpivot()
        .arg("evaluate")
        .arg(dir.path())
        .args(["--backend", "oracle", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("iterations"));
}

#[test]
fn convert_breakfast_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("P03_cereals.txt");
    fs::write(&input, "1-30 SIL\n31-150 take_bowl\n151-300 pour_cereals\n").unwrap();
    let res = tpivot().arg("convert-annotations").arg(&input).args(["--fps", "15"]).output().unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let gt = json(&dir.path().join("P03_cereals.json"));
    assert_eq!(gt["video_id"], "P03_cereals");
    assert_eq!(gt["segments"][1]["start_s"], 2.0);
    assert_eq!(gt["duration_s"], 20.0);
}

#[test]
fn dump_grid_writes_image_and_label_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 1, 2, 8);
    let out = dir.path().join("grid");
    let res = tpivot()
        .arg("dump-grid")
        .arg(data.join("synth_000"))
        .args(["--grid", "3x3", "--canvas-px", "120", "--center", "10", "--width", "8"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    let img = image::open(out.with_extension("png")).unwrap();
    assert!(img.width() <= 120 && img.height() <= 120);
    let side = json(&out.with_extension("json"));
    assert_eq!(side["label_map"]["1"], 6.0);
    assert_eq!(side["label_map"]["9"], 14.0);
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 9);
}
