//! Line-delimited JSON report records and the human-readable summary.

use std::fmt::Write as _;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::coordinator::WindowReport;
use crate::harness::{Metrics, OracleTable};

#[derive(Debug, Serialize)]
pub struct SummaryRecord {
    pub record: &'static str,
    pub window_id: u32,
    pub mode: &'static str,
    pub nodes: usize,
    pub candidates: usize,
    pub super_points: usize,
    pub stage1_total: usize,
    pub stage2_total: usize,
    pub stage3_total: usize,
    pub per_node_bytes: Vec<usize>,
    pub master_structure_bytes: usize,
    pub transmitted_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub candidate_addresses: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct SuperPointRecord {
    pub record: &'static str,
    pub window_id: u32,
    pub address: String,
    pub estimate: f64,
    pub saturated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<usize>,
}

pub fn summary_record(report: &WindowReport, metrics: Option<Metrics>) -> SummaryRecord {
    SummaryRecord {
        record: "summary",
        window_id: report.window_id,
        mode: report.mode.name(),
        nodes: report.per_node.len(),
        candidates: report.candidates_count(),
        super_points: report.super_points.len(),
        stage1_total: report.stage1_total(),
        stage2_total: report.stage2_total(),
        stage3_total: report.stage3_total(),
        per_node_bytes: report.per_node.iter().map(|n| n.total()).collect(),
        master_structure_bytes: report.master_structure_bytes,
        transmitted_fraction: report.transmitted_fraction(),
        metrics,
        candidate_addresses: report.candidates.iter().map(|&c| Ipv4Addr::from(c).to_string()).collect(),
    }
}

pub fn super_point_records(report: &WindowReport, oracle: Option<&OracleTable>) -> Vec<SuperPointRecord> {
    report
        .super_points
        .iter()
        .map(|sp| SuperPointRecord {
            record: "super_point",
            window_id: report.window_id,
            address: Ipv4Addr::from(sp.address).to_string(),
            estimate: sp.estimate,
            saturated: sp.saturated,
            truth: oracle.map(|o| o.cardinality(sp.address)),
        })
        .collect()
}

/// Writes one summary line followed by one line per super point.
pub fn write_records<W: Write>(
    mut w: W,
    report: &WindowReport,
    metrics: Option<Metrics>,
    oracle: Option<&OracleTable>,
) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &summary_record(report, metrics))?;
    writeln!(w)?;
    for r in super_point_records(report, oracle) {
        serde_json::to_writer(&mut w, &r)?;
        writeln!(w)?;
    }
    Ok(())
}

fn mib(bytes: usize) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

/// Super points followed by the per-node communication table.
pub fn human_summary(report: &WindowReport, metrics: Option<&Metrics>, oracle: Option<&OracleTable>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "window {} ({}): {} candidates, {} super points",
        report.window_id,
        report.mode.name(),
        report.candidates_count(),
        report.super_points.len()
    );
    for sp in &report.super_points {
        let truth = oracle.map_or(String::new(), |o| format!("  truth {}", o.cardinality(sp.address)));
        let sat = if sp.saturated { "  (saturated)" } else { "" };
        let _ = writeln!(s, "  {:<15} {:>10.1}{truth}{sat}", Ipv4Addr::from(sp.address), sp.estimate);
    }
    if let Some(m) = metrics {
        let _ = writeln!(
            s,
            "  N={} N+={} N-={}  FPR={:.2}%  FNR={:.2}%  FTR={:.2}%",
            m.n, m.n_plus, m.n_minus, m.fpr, m.fnr, m.ftr
        );
    }
    let _ = writeln!(
        s,
        "  {:>4} {:>8} {:>12} {:>10} {:>12} {:>12} {:>9}",
        "node", "w", "REC", "stage2", "stage3", "total", "fraction"
    );
    for n in &report.per_node {
        let _ = writeln!(
            s,
            "  {:>4} {:>8} {:>10.3}MB {:>8}B {:>10.3}MB {:>10.3}MB {:>8.3}%",
            n.node_id,
            report.candidates_count(),
            mib(n.stage1),
            n.stage2,
            mib(n.stage3),
            mib(n.total()),
            100.0 * n.total() as f64 / report.master_structure_bytes as f64
        );
    }
    s
}
