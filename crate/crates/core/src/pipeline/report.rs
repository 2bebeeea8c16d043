//! Result tables: CSV, JSON and a plain-text layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineReport;
use crate::eds::{EdsReport, Stat};
use crate::error::Result;
use crate::explainers::{Family, Fidelity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdsCells {
    pub overall: Stat,
    pub s_na: Stat,
    pub ns_na: Stat,
    pub s_a: Stat,
    pub ns_a: Stat,
}

impl From<&EdsReport> for EdsCells {
    fn from(r: &EdsReport) -> Self {
        EdsCells { overall: r.overall, s_na: r.s_na, ns_na: r.ns_na, s_a: r.s_a, ns_a: r.ns_a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCells {
    pub kssd: f64,
    pub ccm: f64,
    pub fam: f64,
}

impl From<&BaselineReport> for BaselineCells {
    fn from(r: &BaselineReport) -> Self {
        BaselineCells { kssd: r.kssd, ccm: r.ccm, fam: r.fam }
    }
}

/// One explainer. KSSD/CCM/FAM stay per row: their units differ between
/// explainer families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub explainer: String,
    pub family: Family,
    pub fidelity: Option<Fidelity>,
    pub artifact: String,
    pub eds: Option<EdsCells>,
    pub baselines: Option<BaselineCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub dataset: String,
    pub runs: usize,
    pub rows: Vec<ReportRow>,
}

pub const CSV_COLUMNS: [&str; 12] =
    ["explainer", "fidelity", "artifact", "overall", "s_na", "ns_na", "s_a", "ns_a", "kssd", "ccm", "fam", "ci95"];

fn fidelity_name(f: Option<Fidelity>) -> &'static str {
    match f {
        Some(Fidelity::Ideal) => "ideal",
        Some(Fidelity::Noisy) => "noisy",
        Some(Fidelity::Random) => "random",
        None => "",
    }
}

/// Negative zero prints as zero.
fn num(v: f64, digits: usize) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.digits$}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(report: &Report) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in &report.rows {
        let mut cells = vec![csv_field(&r.explainer), fidelity_name(r.fidelity).to_string(), csv_field(&r.artifact)];
        match &r.eds {
            Some(e) => cells.extend([e.overall, e.s_na, e.ns_na, e.s_a, e.ns_a].iter().map(|s| num(s.mean, 6))),
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        match &r.baselines {
            Some(b) => cells.extend([b.kssd, b.ccm, b.fam].iter().map(|&v| num(v, 6))),
            None => cells.extend(std::iter::repeat_n(String::new(), 3)),
        }
        cells.push(r.eds.and_then(|e| e.overall.ci95).map(|c| num(c, 6)).unwrap_or_default());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// "0.750 ± 0.020", or just the mean for a single run.
pub fn format_stat(s: &Stat) -> String {
    match s.ci95 {
        Some(c) => format!("{} ± {}", num(s.mean, 3), num(c, 3)),
        None => num(s.mean, 3),
    }
}

pub fn to_text(report: &Report) -> String {
    let header = ["Explainer", "Fidelity", "Overall", "S/NA", "NS/NA", "S/A", "NS/A", "KSSD", "CCM", "FAM"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &report.rows {
        let mut cells = vec![r.explainer.clone(), fidelity_name(r.fidelity).to_string()];
        match &r.eds {
            Some(e) => cells.extend([e.overall, e.s_na, e.ns_na, e.s_a, e.ns_a].iter().map(format_stat)),
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        match &r.baselines {
            Some(b) => cells.extend([b.kssd, b.ccm, b.fam].iter().map(|&v| num(v, 3))),
            None => cells.extend(std::iter::repeat_n(String::new(), 3)),
        }
        rows.push(cells);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = format!("{} ({}, {} runs)\n", report.name, report.dataset, report.runs);
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

/// Writes `report.csv`, `report.json` and `report.txt` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), to_csv(report))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(dir.join("report.txt"), to_text(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(mean: f64, ci: f64) -> Stat {
        Stat { mean, std: Some(ci), ci95: Some(ci) }
    }

    fn sample() -> Report {
        let s = stat(0.75, 0.02);
        Report {
            name: "t".into(),
            dataset: "d".into(),
            runs: 5,
            rows: vec![
                ReportRow {
                    explainer: "concept".into(),
                    family: Family::Concept,
                    fidelity: Some(Fidelity::Ideal),
                    artifact: "stripe".into(),
                    eds: Some(EdsCells { overall: s, s_na: s, ns_na: s, s_a: s, ns_a: s }),
                    baselines: Some(BaselineCells { kssd: -0.0, ccm: 0.0, fam: -0.5 }),
                },
                ReportRow {
                    explainer: "tracin".into(),
                    family: Family::Influence,
                    fidelity: None,
                    artifact: "square".into(),
                    eds: None,
                    baselines: Some(BaselineCells { kssd: 1.0, ccm: 0.5, fam: 0.0 }),
                },
            ],
        }
    }

    #[test]
    fn csv_layout_and_empty_cells() {
        let csv = to_csv(&sample());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "concept,ideal,stripe,0.750000,0.750000,0.750000,0.750000,0.750000,0.000000,0.000000,-0.500000,0.020000"
        );
        assert_eq!(lines[2], "tracin,,square,,,,,,1.000000,0.500000,0.000000,");
    }

    #[test]
    fn stat_formatting_and_json_round_trip() {
        assert_eq!(format_stat(&stat(0.75, 0.02)), "0.750 ± 0.020");
        assert_eq!(format_stat(&Stat::single(0.5)), "0.500");
        let r = sample();
        let back: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(to_text(&r).contains("0.750 ± 0.020"));
    }
}
