//! Tabular plot data from one or more JSON reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use xrank_core::corpus_io::{read_report, NULL_MARKER};
use xrank_core::metrics::{pearson, EvalReport};

pub const SCATTER_TSV: &str = "scatter.tsv";
pub const CURVE_TSV: &str = "curve.tsv";
pub const CORRELATION_TSV: &str = "correlation.tsv";

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Reports as `[LABEL=]PATH`; the label defaults to the file stem.
    #[arg(required = true)]
    reports: Vec<String>,
    /// Directory for the .tsv files [default: <out-dir>/plots].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn split_label(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, path)
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| NULL_MARKER.to_string(), |x| x.to_string())
}

fn paired(
    report: &EvalReport,
    other: impl Fn(&xrank_core::metrics::QueryMetrics) -> Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    report
        .per_query
        .iter()
        .filter_map(|q| Some((q.ndcg?, other(q)?)))
        .unzip()
}

fn render(reports: &[(String, EvalReport)]) -> (String, String, String) {
    let mut scatter = String::from("system\tquery\tndcg\tmrc\tmer\n");
    let mut curve = String::from("system\tm\tw\tndcg\tmrc\tmer\ts_c\tfidelity\tjaccard\n");
    let mut corr = String::from("system\tpair\tn\tpearson\n");
    for (label, r) in reports {
        for q in &r.per_query {
            let _ = writeln!(
                scatter,
                "{label}\t{}\t{}\t{}\t{}",
                q.query_id,
                cell(q.ndcg),
                cell(q.mrc),
                cell(q.mer)
            );
        }
        let a = &r.aggregate;
        let w = r
            .params
            .w
            .map_or_else(|| NULL_MARKER.to_string(), |w| w.to_string());
        let _ = writeln!(
            curve,
            "{label}\t{}\t{w}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.params.m,
            cell(a.ndcg),
            cell(a.mrc),
            cell(a.mer),
            cell(a.s_c),
            cell(a.fidelity),
            cell(a.jaccard)
        );
        for (pair, (x, y)) in [
            ("ndcg~mrc", paired(r, |q| q.mrc)),
            ("ndcg~mer", paired(r, |q| q.mer)),
        ] {
            let _ = writeln!(
                corr,
                "{label}\t{pair}\t{}\t{}",
                x.len(),
                cell(pearson(&x, &y))
            );
        }
    }
    // across systems, on aggregates
    for (pair, pick) in [
        (
            "ndcg~mrc",
            (|r: &EvalReport| r.aggregate.mrc) as fn(&EvalReport) -> Option<f64>,
        ),
        ("ndcg~mer", |r: &EvalReport| r.aggregate.mer),
    ] {
        let (x, y): (Vec<f64>, Vec<f64>) = reports
            .iter()
            .filter_map(|(_, r)| Some((r.aggregate.ndcg?, pick(r)?)))
            .unzip();
        let _ = writeln!(corr, "*\t{pair}\t{}\t{}", x.len(), cell(pearson(&x, &y)));
    }
    (scatter, curve, corr)
}

pub fn run(out_dir: &Option<PathBuf>, args: &PlotArgs) -> Result<ExitCode> {
    let mut reports = Vec::with_capacity(args.reports.len());
    for arg in &args.reports {
        let (label, path) = split_label(arg);
        if label.contains('\t') {
            bail!("label {label:?} contains a tab");
        }
        reports.push((label, read_report(&path)?));
    }
    let dir = args.out.clone().unwrap_or_else(|| {
        out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(super::DEFAULT_OUT_DIR))
            .join("plots")
    });
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (scatter, curve, corr) = render(&reports);
    write(&dir.join(SCATTER_TSV), &scatter)?;
    write(&dir.join(CURVE_TSV), &curve)?;
    write(&dir.join(CORRELATION_TSV), &corr)?;
    Ok(ExitCode::SUCCESS)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
