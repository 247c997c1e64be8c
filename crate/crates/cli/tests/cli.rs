//! End-to-end runs of the `relcomp` binary on small generated workspaces.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn relcomp(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relcomp"))
        .args(args)
        .env("RELCOMP_CACHE", cache)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Parent `n` with 40 rows, child `a` with `per_parent` rows each. The
/// child's category follows the parent's and its price is `10 * i + j`.
struct Fixture {
    dir: tempfile::TempDir,
    /// (parent density, child category, child price)
    rows: Vec<(&'static str, &'static str, f64)>,
}

fn fixture(incomplete: bool, per_parent: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let incomplete = if incomplete { r#"["a"]"# } else { "[]" };
    let schema = format!(
        r#"{{"tables": [
            {{"name": "n", "columns": [{{"name": "id", "type": "key", "pk": true}}, {{"name": "d", "type": "categorical"}}]}},
            {{"name": "a", "columns": [{{"name": "id", "type": "key", "pk": true}}, {{"name": "n_id", "type": "key"}},
                                     {{"name": "r", "type": "categorical"}}, {{"name": "p", "type": "continuous"}}]}}],
            "foreign_keys": [{{"child": "a.n_id", "parent": "n.id"}}],
            "incomplete_tables": {incomplete}}}"#
    );
    std::fs::write(dir.path().join("schema.json"), schema).unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let (mut n, mut a) = (String::from("id,d\n"), String::from("id,n_id,r,p\n"));
    let mut rows = Vec::new();
    for i in 0..40 {
        let (d, r) = if i % 2 == 0 { ("hi", "x") } else { ("lo", "y") };
        writeln!(n, "n{i},{d}").unwrap();
        for j in 0..per_parent {
            let p = (10 * i + j) as f64;
            writeln!(a, "a{i}_{j},n{i},{r},{p}").unwrap();
            rows.push((d, r, p));
        }
    }
    std::fs::write(data.join("n.csv"), n).unwrap();
    std::fs::write(data.join("a.csv"), a).unwrap();
    Fixture { dir, rows }
}

impl Fixture {
    fn path(&self, p: &str) -> String {
        self.dir.path().join(p).display().to_string()
    }

    fn cache(&self) -> std::path::PathBuf {
        self.dir.path().join("cache")
    }

    fn ingest(&self) {
        ok(&relcomp(&["ingest", &self.path("schema.json"), &self.path("data"), &self.path("ws")], &self.cache()));
    }
}

#[test]
fn training_twice_gives_identical_catalogs() {
    let f = fixture(true, 3);
    f.ingest();
    let train = || {
        let out = ok(&relcomp(
            &["--json", "train", &f.path("ws"), "--epochs", "3", "--width", "16", "--seed", "7"],
            &f.cache(),
        ));
        let v: Value = serde_json::from_str(&out).unwrap();
        let bytes = std::fs::read(f.dir.path().join("ws/catalog.bin")).unwrap();
        (v["catalog_fingerprint"].as_str().unwrap().to_string(), bytes)
    };
    let (fp1, b1) = train();
    let (fp2, b2) = train();
    assert_eq!(fp1, fp2);
    assert!(b1 == b2, "catalog files differ");
}

#[test]
fn query_on_complete_data_matches_direct_computation() {
    let f = fixture(false, 3);
    f.ingest();
    let ws = f.path("ws");

    let out = ok(&relcomp(&["--json", "query", &ws, "SELECT n.d, SUM(a.p) FROM n, a WHERE a.p > 100 GROUP BY n.d"], &f.cache()));
    let v: Value = serde_json::from_str(&out).unwrap();
    let rows = v["rows"].as_array().unwrap();
    for d in ["hi", "lo"] {
        let expected: f64 = f.rows.iter().filter(|r| r.0 == d && r.2 > 100.0).map(|r| r.2).sum();
        let row = rows.iter().find(|r| r["group"][0].to_string().contains(d)).expect("group present");
        assert_eq!(row["estimate"].as_f64().unwrap(), expected, "group {d}");
        assert_eq!(row["synthesized_fraction"].as_f64().unwrap(), 0.0);
    }

    let out = ok(&relcomp(&["--json", "query", &ws, "SELECT AVG(a.p) FROM a WHERE a.r = 'y'"], &f.cache()));
    let v: Value = serde_json::from_str(&out).unwrap();
    let ys: Vec<f64> = f.rows.iter().filter(|r| r.1 == "y").map(|r| r.2).collect();
    let expected = ys.iter().sum::<f64>() / ys.len() as f64;
    assert!((v["rows"][0]["estimate"].as_f64().unwrap() - expected).abs() < 1e-9);
}

#[test]
fn repeated_commands_print_identical_output() {
    let f = fixture(true, 3);
    f.ingest();
    let ws = f.path("ws");
    ok(&relcomp(&["train", &ws, "--epochs", "3", "--width", "16", "--threshold", "1.0"], &f.cache()));
    let q = ["query", ws.as_str(), "SELECT a.r, COUNT(*) FROM a GROUP BY a.r", "--confidence", "0.9", "--seed", "2"];
    let first = ok(&relcomp(&q, &f.cache()));
    let second = ok(&relcomp(&q, &f.cache()));
    assert_eq!(first, second);

    let csv = f.path("join.csv");
    let complete = ["complete", ws.as_str(), "--path", "n,a", "--csv", csv.as_str()];
    ok(&relcomp(&complete, &f.cache()));
    let a = std::fs::read(&csv).unwrap();
    ok(&relcomp(&complete, &f.cache()));
    assert!(a == std::fs::read(&csv).unwrap(), "completed join CSV changed");
    assert!(String::from_utf8(a).unwrap().starts_with("n.id,n.d,a.id,a.n_id,a.r,a.p"));
}

#[test]
fn repl_answers_each_line_and_survives_errors() {
    use std::io::Write;
    let f = fixture(false, 2);
    f.ingest();
    let mut child = Command::new(env!("CARGO_BIN_EXE_relcomp"))
        .args(["--json", "query", &f.path("ws"), "--repl"])
        .env("RELCOMP_CACHE", f.cache())
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"SELECT COUNT(*) FROM a\nnonsense\nSELECT COUNT(*) FROM n;\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let docs: Vec<Value> =
        serde_json::Deserializer::from_str(&text).into_iter::<Value>().map(|d| d.unwrap()).collect();
    assert_eq!(docs.len(), 3);
    assert_eq!(docs[0]["rows"][0]["estimate"].as_f64(), Some(80.0));
    assert!(docs[1]["error"].is_string());
    assert_eq!(docs[2]["rows"][0]["estimate"].as_f64(), Some(40.0));
}

#[test]
fn bench_writes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bench.json");
    std::fs::write(
        &spec,
        r#"{"data": {"n_parents": 150}, "grid": {"predictability": [1.0, 0.5]}, "seeds": 1, "epochs": 3, "width": 16}"#,
    )
    .unwrap();
    let out = ok(&relcomp(&["bench", &spec.display().to_string()], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("predictability,skew,"));
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("0.5,"));
}

#[test]
fn exit_codes_follow_the_documented_table() {
    let f = fixture(true, 3);
    let code = |args: &[&str]| relcomp(args, &f.cache()).status.code();

    // Usage: missing arguments, out-of-range flags, no workspace yet.
    assert_eq!(code(&["query"]), Some(1));
    assert_eq!(code(&["query", &f.path("ws"), "SELECT COUNT(*) FROM a"]), Some(1));
    f.ingest();
    assert_eq!(code(&["query", &f.path("ws"), "SELECT COUNT(*) FROM a", "--confidence", "1.5"]), Some(1));
    assert_eq!(code(&["train", &f.path("ws"), "--epochs", "0"]), Some(1));

    // Validation: malformed SQL, unknown column, bad CSV.
    assert_eq!(code(&["query", &f.path("ws"), "SELEC COUNT(*)"]), Some(2));
    assert_eq!(code(&["query", &f.path("ws"), "SELECT SUM(a.nope) FROM a"]), Some(2));
    std::fs::write(f.dir.path().join("data/n.csv"), "id\nn0\n").unwrap();
    assert_eq!(code(&["ingest", &f.path("schema.json"), &f.path("data"), &f.path("ws2")]), Some(2));

    // Execution: completing an incomplete table without any trained model.
    assert_eq!(code(&["query", &f.path("ws"), "SELECT COUNT(*) FROM a"]), Some(4));
}
