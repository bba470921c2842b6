use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kronmark::checkpoint::sha256;
use kronmark::net::KpfemConfig;

fn kronmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kronmark"))
        .args(args)
        .env_remove("KRONMARK_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kronmark(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn gen(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{count}_{seed}"));
    ok(&["gen", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir.join("manifest.json"))).unwrap()
}

fn assert_digests(dir: &Path) {
    let m = manifest(dir);
    let outputs = m["outputs"].as_object().unwrap();
    assert!(!outputs.is_empty());
    for (name, digest) in outputs {
        let bytes = fs::read(dir.join(name)).unwrap();
        assert_eq!(digest.as_str().unwrap(), hex::encode(sha256(&bytes)), "{name}");
    }
}

#[test]
fn gen_is_deterministic_and_documented() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(tmp.path(), 10, 7);
    let b = tmp.path().join("again");
    ok(&["gen", "--count", "10", "--seed", "7", "--out", s(&b)]);
    assert_eq!(read(a.join("index.jsonl")), read(b.join("index.jsonl")));
    assert_eq!(read(a.join("specimens.csv")), read(b.join("specimens.csv")));
    assert_eq!(read(a.join("index.jsonl")).lines().count(), 10);
    let csv = read(a.join("specimens.csv"));
    assert_eq!(
        csv.lines().next().unwrap(),
        "id,weight_g,mm_per_px,Total length (mm),Body length (mm),First ASH (mm),Third ASH (mm),Last ASH (mm)"
    );
    assert!(!csv.contains('\r'));
    assert_digests(&a);
    let m = manifest(&a);
    assert_eq!(m["command"], "gen");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["count"], 10);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(tmp.path(), 3, 5);
    let b = tmp.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_kronmark"))
        .args(["gen", "--count", "3", "--out", s(&b)])
        .env("KRONMARK_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(a.join("index.jsonl")), read(b.join("index.jsonl")));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    assert_eq!(kronmark(&["gen", "--count", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(kronmark(&["gen", "--count", "x", "--out", out]).status.code(), Some(2));
    assert_eq!(kronmark(&["gen", "--count", "3", "--out", out, "--length-min", "-5"]).status.code(), Some(2));
    assert_eq!(kronmark(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kronmark(&["bench", "--passes", "10", "--out", out]).status.code(), Some(2));
    assert_eq!(kronmark(&["weight", "--data", out, "--mode", "sideways", "--out", out]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let under_file = blocker.join("out");
    assert_eq!(kronmark(&["gen", "--count", "2", "--out", s(&under_file)]).status.code(), Some(3));
    let missing = tmp.path().join("missing");
    let out = s(tmp.path());
    assert_eq!(kronmark(&["train", "--data", s(&missing), "--epochs", "1", "--out", out]).status.code(), Some(3));
    assert_eq!(kronmark(&["pca", "--data", s(&missing), "--out", out]).status.code(), Some(3));
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 10, 3);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&["train", "--data", s(&data), "--epochs", "1", "--batch", "2", "--seed", "1", "--out", s(&out)]);
        out
    };
    let a = run("a");
    let b = run("b");
    let history = read(a.join("loss_history.csv"));
    assert_eq!(history, read(b.join("loss_history.csv")));
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_coords,train_heatmap,train_avg,val_avg");
    assert_eq!(lines.len(), 2);
    assert_eq!(fs::read(a.join("model.kmck")).unwrap(), fs::read(b.join("model.kmck")).unwrap());
    assert_digests(&a);
    assert_eq!(manifest(&a)["config"]["train"]["batch_size"], 2);

    let ev = tmp.path().join("eval");
    let ckpt = a.join("model.kmck");
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--seed", "1", "--out", s(&ev)]);
    assert_eq!(read(ev.join("eval_report.csv")).lines().next().unwrap(), "AP,AP50,AP75,AR,AR50,AR75");
    assert_eq!(read(ev.join("oks_per_image.csv")).lines().count(), 1 + 4);
    assert_eq!(
        read(ev.join("trait_mad.csv")).lines().next().unwrap(),
        "Total length,Body length,First ASH,Third ASH,Last ASH"
    );

    let other = tmp.path().join("dense.json");
    fs::write(&other, serde_json::to_string(&KpfemConfig::default().with_order(1)).unwrap()).unwrap();
    let out = kronmark(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--model", s(&other), "--out", s(&ev)]);
    assert_eq!(out.status.code(), Some(4));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&hex::encode(KpfemConfig::default().digest())));
    assert!(msg.contains(&hex::encode(KpfemConfig::default().with_order(1).digest())));

    let missing = tmp.path().join("nope.kmck");
    assert_eq!(kronmark(&["eval", "--data", s(&data), "--checkpoint", s(&missing), "--out", s(&ev)]).status.code(), Some(3));
}

#[test]
fn oracle_evaluation_is_perfect_at_half_oks() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 20, 4);
    let ev = tmp.path().join("eval");
    ok(&["eval", "--data", s(&data), "--oracle", "--split", "all", "--out", s(&ev)]);
    let report = read(ev.join("eval_report.csv"));
    let values: Vec<f64> = report.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values[1], 1.0, "AP50");
    assert_eq!(values[4], 1.0, "AR50");
}

#[test]
fn weight_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 40, 6);
    let run = |mode: &str, name: &str| {
        let out = tmp.path().join(name);
        ok(&["weight", "--data", s(&data), "--mode", mode, "--epochs", "3", "--seed", "2", "--out", s(&out)]);
        out
    };
    let c = run("compare", "c1");
    let csv = read(c.join("weight_compare.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "Method,MAE (g),MSE (g),R2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("Linear Regression,"));
    assert!(lines[2].starts_with("Deep Learning-based Method,"));
    assert!(lines[3].starts_with("Proposed Approach,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 4));
    assert_eq!(csv, read(run("compare", "c2").join("weight_compare.csv")));

    let a = run("ablation", "a1");
    let csv = read(a.join("weight_ablation.csv"));
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["PCA (n=2)", "PCA (n=5)", "PCA (n=10)", "No PCA"]);
    assert_eq!(csv, read(run("ablation", "a2").join("weight_ablation.csv")));
    assert_digests(&a);
}

#[test]
fn pca_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen(tmp.path(), 30, 8);
    let out = tmp.path().join("pca");
    ok(&["pca", "--data", s(&data), "--out", s(&out)]);
    let table = read(out.join("pca_variance.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], ",PC1,PC2,PC3,PC4,PC5,PC6");
    let row = |i: usize| -> Vec<f64> { lines[i].split(',').skip(1).map(|v| v.parse().unwrap()).collect() };
    assert!(lines[1].starts_with("Standard deviation,"));
    let (prop, cum) = (row(2), row(3));
    assert!(cum.windows(2).all(|w| w[0] <= w[1]));
    assert!((cum[0] - prop[0]).abs() < 1e-6);
    assert_eq!(read(out.join("pca_scores.csv")).lines().count(), 31);
    assert_eq!(read(out.join("pca_loadings.csv")).lines().count(), 67);
    assert!(read(out.join("distances.csv")).lines().next().unwrap().starts_with("id,d_1_2,d_1_3,"));
    let svg = read(out.join("pca_scatter.svg"));
    assert_eq!(svg.matches("<circle").count(), 30);
    assert!(svg.contains("Dim1") && svg.contains("Dim2"));

    let again = tmp.path().join("pca2");
    ok(&["pca", "--data", s(&data), "--out", s(&again)]);
    for f in ["pca_variance.csv", "pca_scores.csv", "pca_loadings.csv", "distances.csv", "pca_scatter.svg"] {
        assert_eq!(read(out.join(f)), read(again.join(f)), "{f}");
    }
    let bad = kronmark(&["pca", "--data", s(&data), "--components", "30", "--out", s(&again)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_reports_exact_costs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&["bench", "--input-size", "64", "--warmup", "2", "--out", s(&out)]);
        read(out.join("bench.csv"))
    };
    let (a, b) = (run("a"), run("b"));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "Network,FLOPs,Params,Size (MB),Throughput (img/sec),Coords,HeatMap,Avg");
    let fields = |l: &str| l.split(',').map(String::from).collect::<Vec<_>>();
    let (kcl, dense) = (fields(lines[1]), fields(lines[2]));
    assert_eq!(kcl[0], "KPFEM (n=3)");
    assert_eq!(dense[0], "KPFEM (n=1)");
    let mut cfg = KpfemConfig::default();
    cfg.input_size = 64;
    assert_eq!(kcl[2], cfg.total_cost().unwrap().param_count.to_string());
    let ratio = dense[2].parse::<f64>().unwrap() / kcl[2].parse::<f64>().unwrap();
    assert!((2.5..=3.0).contains(&ratio), "{ratio}");
    assert!(kcl[4].parse::<f64>().unwrap() > 0.0);
    for (x, y) in a.lines().zip(b.lines()).skip(1) {
        assert_eq!(fields(x)[..4], fields(y)[..4]);
    }
}
