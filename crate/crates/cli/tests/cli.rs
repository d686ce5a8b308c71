use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const XRANK: &str = env!("CARGO_BIN_EXE_xrank");

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn xrank(args: &[&str]) -> Output {
    Command::new(XRANK)
        .args(args)
        .env_remove("XRANK_WORKERS")
        .output()
        .expect("spawn xrank")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn evaluate(out: &Path, extra: &[&str]) -> Output {
    let corpus = fixture("corpus20.jsonl");
    let queries = fixture("queries20.tsv");
    let qrels = fixture("qrels20.txt");
    let out = p(out);
    let mut args = vec![
        "evaluate",
        "--corpus",
        &corpus,
        "--queries",
        &queries,
        "--qrels",
        &qrels,
        "--k",
        "5",
        "--m",
        "2",
        "--seed",
        "9",
        "--out-dir",
        &out,
    ];
    args.extend(extra);
    xrank(&args)
}

#[test]
fn index_is_reproducible_and_corruption_is_fatal() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a.idx"), tmp.path().join("b.idx"));
    let corpus = fixture("corpus20.jsonl");
    ok(&xrank(&["index", "--corpus", &corpus, "--out", &p(&a)]));
    ok(&xrank(&["index", "--corpus", &corpus, "--out", &p(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    // retrieval from the saved index matches retrieval from the corpus
    let queries = fixture("queries20.tsv");
    let (r1, r2) = (tmp.path().join("r1.txt"), tmp.path().join("r2.txt"));
    ok(&xrank(&[
        "retrieve",
        "--index",
        &p(&a),
        "--queries",
        &queries,
        "--out",
        &p(&r1),
    ]));
    ok(&xrank(&[
        "retrieve",
        "--corpus",
        &corpus,
        "--queries",
        &queries,
        "--out",
        &p(&r2),
    ]));
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());

    let mut bytes = fs::read(&a).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&a, &bytes).unwrap();
    let out = xrank(&[
        "retrieve",
        "--index",
        &p(&a),
        "--queries",
        &queries,
        "--out",
        &p(&r1),
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(&a, b"not an index").unwrap();
    assert_eq!(
        xrank(&["retrieve", "--index", &p(&a), "--queries", &queries])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn evaluate_then_report_roundtrip_and_idempotence() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("e");
    ok(&evaluate(&out, &[]));
    let first = fs::read(out.join("report.json")).unwrap();
    ok(&evaluate(&out, &[]));
    assert_eq!(first, fs::read(out.join("report.json")).unwrap());

    let rendered = tmp.path().join("again.tsv");
    ok(&xrank(&[
        "report",
        &p(&out.join("report.json")),
        "--out",
        &p(&rendered),
    ]));
    assert_eq!(
        fs::read(&rendered).unwrap(),
        fs::read(out.join("report.tsv")).unwrap()
    );
}

#[test]
fn missing_subdoc_warns_and_nulls_mer() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("e");
    let missing = p(&tmp.path().join("nope.jsonl"));
    let o = evaluate(&out, &["--subdoc", &missing]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["aggregate"]["mer"].is_null());
    assert!(report["aggregate"]["mrc"].is_number());
}

#[test]
fn unreachable_scorer_names_the_address() {
    let tmp = TempDir::new().unwrap();
    let o = evaluate(&tmp.path().join("e"), &["--scorer-addr", "127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("127.0.0.1:9"));
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = pairs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let vy: f64 = pairs.iter().map(|(_, y)| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn plotdata_scatter_curve_and_correlation() {
    let tmp = TempDir::new().unwrap();
    let (bm25, tc) = (tmp.path().join("bm25"), tmp.path().join("tc"));
    ok(&evaluate(&bm25, &[]));
    ok(&evaluate(&tc, &["--scorer", "termcount"]));
    let plots = tmp.path().join("plots");
    let a = format!("bm25={}", p(&bm25.join("report.json")));
    let b = format!("tc={}", p(&tc.join("report.json")));
    ok(&xrank(&["plotdata", &a, &b, "--out", &p(&plots)]));

    let scatter = rows(&plots.join("scatter.tsv"));
    assert_eq!(scatter.len(), 2 * 4);

    // cross-check the per-system ndcg~mrc correlation from the scatter rows
    let corr = rows(&plots.join("correlation.tsv"));
    for system in ["bm25", "tc"] {
        let pairs: Vec<(f64, f64)> = scatter
            .iter()
            .filter(|r| r[0] == system && r[3] != "null")
            .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
            .collect();
        let row = corr
            .iter()
            .find(|r| r[0] == system && r[1] == "ndcg~mrc")
            .unwrap();
        let want = pearson(&pairs);
        if want.is_finite() {
            let got: f64 = row[3].parse().unwrap();
            assert!((got - want).abs() < 1e-12, "{system}: {got} vs {want}");
        } else {
            assert_eq!(row[3], "null");
        }
    }
}

#[test]
fn sweep_reports_feed_a_curve() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let corpus = fixture("corpus20.jsonl");
    let queries = fixture("queries20.tsv");
    ok(&xrank(&[
        "sweep",
        "--corpus",
        &corpus,
        "--queries",
        &queries,
        "--k",
        "5",
        "--m-list",
        "1,2,3",
        "--metrics",
        "mrc",
        "--seed",
        "1",
        "--out-dir",
        &p(&out),
    ]));
    let reports: Vec<PathBuf> = (1..=3)
        .map(|m| out.join(format!("report_m{m}.json")))
        .collect();
    let mut args = vec!["plotdata".to_string()];
    args.extend(reports.iter().map(|r| p(r)));
    args.extend(["--out".into(), p(&tmp.path().join("plots"))]);
    ok(&xrank(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let curve = rows(&tmp.path().join("plots/curve.tsv"));
    assert_eq!(curve.len(), 3);
    let ms: Vec<&str> = curve.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ms, ["1", "2", "3"]);
    assert_eq!(rows(&out.join("sweep.tsv")).len(), 3);
}
