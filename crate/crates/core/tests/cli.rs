use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_demo2prog");

/// Small and fast: a short patrol and a tiny network.
const QUICK_CONFIG: &str = r#"{
  "task": { "steps": 7 },
  "net": { "input_width": 8, "input_height": 6, "hidden": [8] },
  "train": { "epochs": 2 }
}"#;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DEMO2PROG_OUT", out)
        .output()
        .expect("binary runs")
}

fn quick_config(dir: &Path) -> String {
    let path = dir.join("quick.json");
    std::fs::write(&path, QUICK_CONFIG).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn missing_upstream_file_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "infer", "induce", "ground", "synth"] {
        let o = run(dir.path(), &[cmd]);
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"smc\": { \"particles\": 0 }\n}").unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "demo"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "{\n  \"seed\": \"x\"\n}").unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "demo"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = run(dir.path(), &["--config", dir.path().join("nope.json").to_str().unwrap(), "demo"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn env_output_dir_beats_flag() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(env_dir.path());
    let o = run(env_dir.path(), &["--config", &cfg, "--out", flag_dir.path().to_str().unwrap(), "demo"]);
    assert!(o.status.success());
    assert!(env_dir.path().join("demo/demo.csv").exists());
    assert!(!flag_dir.path().join("demo").exists());
}

#[test]
fn demo_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    assert!(run(dir.path(), &["--config", &cfg, "demo"]).status.success());
    let first = std::fs::read(dir.path().join("demo/demo.csv")).unwrap();
    assert!(run(dir.path(), &["--config", &cfg, "demo"]).status.success());
    assert_eq!(std::fs::read(dir.path().join("demo/demo.csv")).unwrap(), first);
}

#[test]
fn induce_reads_a_symbol_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = demo2prog::program::patrol_trace(&[3, 2, 1, 4, 0, 3], 65);
    let mut csv = String::from("symbol,peak_time\n");
    for (i, s) in trace.iter().enumerate() {
        csv.push_str(&format!("{s},{}\n", i * 10));
    }
    std::fs::write(dir.path().join("symbols.csv"), csv).unwrap();
    let o = run(dir.path(), &["induce"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("program.txt")).unwrap();
    assert!(text.starts_with("loop 6 {\n    palin [2,1,4,0,3]\n    exec 3\n}\n"), "{text}");
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["trace_length"], 65);
}

#[test]
fn full_pipeline_on_a_short_patrol() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    for cmd in ["demo", "train", "infer", "induce", "ground", "synth"] {
        let o = run(dir.path(), &["--config", &cfg, "--threads", "2", cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(format!("{cmd}_summary.json")).exists());
    }
    let program = std::fs::read_to_string(dir.path().join("program.txt")).unwrap();
    let parsed = demo2prog::ProgramAst::parse(&program).unwrap();
    assert!(!parsed.expand().is_empty());
    let o = run(dir.path(), &["--config", &cfg, "eval-table1", "--seeds", "2"]);
    assert!(o.status.success());
    let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(table.starts_with("statistic,mean,max,min,iqr\nattribution (N=50),"));
    let o = run(dir.path(), &["--config", &cfg, "eval-table1", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
