use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ditto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ditto")).args(args).env_remove("DITTO_SEED").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = ["gen-data", "--pde", "burgers", "--nu", "0.01", "--count", "4", "--seed", "7", "--n", "32", "--steps", "10"];
    ok(ditto(&[&args[..], &["--out", a.to_str().unwrap()]].concat()));
    ok(ditto(&[&args[..], &["--out", b.to_str().unwrap()]].concat()));
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 5);
    assert_eq!(files, dir_bytes(&b));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "gen-data");
    assert_eq!(run["seeds"]["data"], 7);

    let c = tmp.path().join("c");
    let out = Command::new(env!("CARGO_BIN_EXE_ditto"))
        .args(&args[..])
        .args(["--out", c.to_str().unwrap()])
        .env("DITTO_SEED", "8")
        .output()
        .unwrap();
    ok(out);
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn validate_config_echoes_and_reports_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let out = ok(ditto(&["validate-config", "--preset", "wave2d", empty.to_str().unwrap()]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("preset = \"wave2d\""));
    assert!(text.contains("[model]"));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[training.strategy]\nkind = \"bundled\"\nlf = 0\nnt = 50\nalpha = 1.5\n").unwrap();
    let out = ditto(&["validate-config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("alpha < 1"));
    assert!(err.contains("1 <= lf <= nt"));

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "[model]\nbase_chanels = 3\n").unwrap();
    assert_eq!(ditto(&["validate-config", unknown.to_str().unwrap()]).status.code(), Some(2));

    let out = ditto(&["validate-config", "--no-such-flag", empty.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn solver_limits_exit_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfl.toml");
    fs::write(&cfg, "[data.pde]\nmax_substeps = 1\n").unwrap();
    let out = ditto(&[
        "gen-data", "--config", cfg.to_str().unwrap(), "--count", "1", "--n", "64", "--steps", "2",
        "--out", tmp.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

const TINY: &str = r#"
[data.pde]
grid = [32]
[model]
grid_shape = [32]
base_channels = 4
channel_mults = [1, 2]
norm_groups = 2
[model.embedding]
d_emb = 8
mlp_hidden = 16
[training.optimizer]
epochs = 1
batch_size = 16
"#;

#[test]
fn train_then_superres_eval_gives_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, format!("[data]\ncount = 10\n{TINY}")).unwrap();
    let (c, d, t, e) = (cfg.to_str().unwrap(), tmp.path().join("data"), tmp.path().join("train"), tmp.path().join("eval"));
    ok(ditto(&["gen-data", "--preset", "burgers-nu0.01", "--config", c, "--out", d.to_str().unwrap()]));
    ok(ditto(&["train", "--preset", "burgers-nu0.01", "--config", c, "--data", d.to_str().unwrap(), "--out", t.to_str().unwrap()]));
    assert!(t.join("checkpoint/manifest.json").exists());
    assert_eq!(fs::read_to_string(t.join("history.csv")).unwrap().lines().count(), 2);
    ok(ditto(&[
        "eval", "--preset", "burgers-nu0.01", "--config", c, "--checkpoint", t.join("checkpoint").to_str().unwrap(),
        "--data", d.to_str().unwrap(), "--mode", "superres", "--out", e.to_str().unwrap(),
    ]));
    let report = fs::read_to_string(e.join("report.csv")).unwrap();
    let values: Vec<String> = report.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect();
    assert_eq!(values, ["10.0", "20.0", "50.0", "100.0", "200.0"]);
    assert!(e.join("run.json").exists());

    let r = tmp.path().join("roll");
    ok(ditto(&[
        "rollout", "--checkpoint", t.join("checkpoint").to_str().unwrap(), "--data", d.to_str().unwrap(),
        "--lf", "5", "--horizon", "12", "--out", r.to_str().unwrap(),
    ]));
    assert_eq!(fs::read(r.join("rollout.bin")).unwrap().len(), 13 * 32 * 4);
}

#[test]
fn extrapolation_report_plots_one_curve_per_lf() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    let text = format!(
        "[data]\ntrain_stride = 1\n{TINY}\n[training.strategy]\nkind = \"bundled\"\nlf = 20\nnt = 100\n[eval.extrapolation]\nlfs = [1, 5, 10, 20, 50, 100]\nhorizon = 200\ntrain_horizon = 100\n"
    );
    fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    let (d, t) = (tmp.path().join("data"), tmp.path().join("train"));
    ok(ditto(&["gen-data", "--config", c, "--count", "5", "--out", d.to_str().unwrap()]));
    ok(ditto(&["train", "--config", c, "--data", d.to_str().unwrap(), "--out", t.to_str().unwrap()]));
    let mut reports = Vec::new();
    for lf in ["1", "5", "10", "20", "50", "100"] {
        let e = tmp.path().join(format!("eval{lf}"));
        ok(ditto(&[
            "eval", "--config", c, "--checkpoint", t.join("checkpoint").to_str().unwrap(), "--data", d.to_str().unwrap(),
            "--mode", "extrap", "--lf", lf, "--label", &format!("lf={lf}"), "--out", e.to_str().unwrap(),
        ]));
        reports.push(e.join("report.csv").to_string_lossy().into_owned());
    }
    let out = tmp.path().join("report");
    let mut args = vec!["report", "--plot", "--out", out.to_str().unwrap(), "--input"];
    args.extend(reports.iter().map(String::as_str));
    ok(ditto(&args));
    let svg = fs::read_to_string(out.join("step.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 6);
    for lf in ["1", "5", "10", "20", "50", "100"] {
        assert!(svg.contains(&format!("lf={lf}\"")), "missing lf={lf}");
    }
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 1 + 6 * 201);
}
