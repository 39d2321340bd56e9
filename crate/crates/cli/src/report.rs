//! Text tables and per-bin plot data for one or more metrics reports.

use std::io::Write;

use anyhow::Result;
use fairgap_core::metrics::{Cell, MetricsReport};

/// `value ±stderr`, `inf` for an unbounded ratio, `n/a (count=N)` when
/// undefined.
pub fn format_cell(cell: &Cell) -> String {
    match cell.value {
        Some(v) => match cell.stderr {
            Some(se) => format!("{v:.4} ±{se:.3}"),
            None => format!("{v:.4}"),
        },
        None if cell.unbounded => "inf".to_string(),
        None => format!("n/a (count={})", cell.count),
    }
}

fn rows_for(report: &MetricsReport) -> Vec<(String, String)> {
    let mut rows = vec![("mse".to_string(), format_cell(&report.mse))];
    for (name, g) in &report.groups {
        let mut push = |metric: &str, cell: &Cell| rows.push((format!("{name} {metric}"), format_cell(cell)));
        push("fpr_ratio", &g.fpr_ratio);
        push("fpr_subgroup", &g.fpr_subgroup);
        push("fpr_background", &g.fpr_background);
        push("eo_gap", &g.eo_gap);
        push("fnr_subgroup", &g.fnr_subgroup);
        push("fnr_background", &g.fnr_background);
        push("demographic_parity_gap", &g.demographic_parity_gap);
        for (prior, c) in &g.conditional {
            push(&format!("conditional_fpr_ratio[{prior}]"), &c.fpr_ratio);
            push(&format!("conditional_eo_gap[{prior}]"), &c.eo_gap);
        }
    }
    rows
}

/// One row per headline metric, one column per report.
pub fn render(reports: &[(String, &MetricsReport)]) -> String {
    let columns: Vec<Vec<(String, String)>> = reports.iter().map(|(_, r)| rows_for(r)).collect();
    let mut keys: Vec<String> = Vec::new();
    for col in &columns {
        for (k, _) in col {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let lookup = |col: &[(String, String)], key: &str| {
        col.iter()
            .find(|(k, _)| k == key)
            .map_or_else(|| "-".to_string(), |(_, v)| v.clone())
    };
    let mut table: Vec<Vec<String>> = Vec::with_capacity(keys.len() + 1);
    let mut header = vec!["metric".to_string()];
    header.extend(reports.iter().map(|(label, _)| label.clone()));
    table.push(header);
    for key in &keys {
        let mut line = vec![key.clone()];
        line.extend(columns.iter().map(|c| lookup(c, key)));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        if i + 1 < table.len() {
            out.push('\n');
        }
    }
    out
}

fn number(cell: &Cell) -> String {
    match (cell.value, cell.unbounded) {
        (Some(v), _) => v.to_string(),
        (None, true) => "inf".into(),
        (None, false) => String::new(),
    }
}

fn stderr(cell: &Cell) -> String {
    cell.stderr.map(|s| s.to_string()).unwrap_or_default()
}

/// Tidy per-bin FPR series: one row per report, group and rating bin.
pub fn write_per_bin<W: Write>(reports: &[(String, &MetricsReport)], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "report",
        "group",
        "bin",
        "lo",
        "hi",
        "fpr_subgroup",
        "stderr_subgroup",
        "count_subgroup",
        "fpr_background",
        "stderr_background",
        "count_background",
        "gap",
    ])?;
    for (label, report) in reports {
        for (group, g) in &report.groups {
            for b in &g.per_bin_fpr {
                wtr.write_record([
                    label.clone(),
                    group.clone(),
                    b.bin.to_string(),
                    b.lo.to_string(),
                    b.hi.to_string(),
                    number(&b.subgroup),
                    stderr(&b.subgroup),
                    b.subgroup.count.to_string(),
                    number(&b.background),
                    stderr(&b.background),
                    b.background.count.to_string(),
                    number(&b.gap),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
