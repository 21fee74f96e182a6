use std::fmt::Write as _;

use super::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    MaxF,
    Ap,
    Precision,
    Recall,
    Fpr,
    Fnr,
    Accuracy,
}

impl Column {
    pub fn header(self) -> &'static str {
        match self {
            Column::MaxF => "MaxF",
            Column::Ap => "AP",
            Column::Precision => "PRE",
            Column::Recall => "REC",
            Column::Fpr => "FPR",
            Column::Fnr => "FNR",
            Column::Accuracy => "Accuracy",
        }
    }

    pub fn value(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Column::MaxF => r.max_f,
            Column::Ap => r.ap,
            Column::Precision => r.precision,
            Column::Recall => r.recall,
            Column::Fpr => r.fpr,
            Column::Fnr => r.fnr,
            Column::Accuracy => r.accuracy,
        }
    }
}

/// Fusion comparison layout.
pub const TABLE_FUSION: &[Column] = &[Column::MaxF, Column::Precision, Column::Recall, Column::Accuracy];
/// Benchmark layout.
pub const TABLE_BENCHMARK: &[Column] =
    &[Column::MaxF, Column::Ap, Column::Precision, Column::Recall, Column::Fpr, Column::Fnr];

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}%", 100.0 * v))
}

/// Aligned text table with percentages; absent values print as `n/a`.
pub fn metrics_table(label: &str, rows: &[(String, MetricsReport)], columns: &[Column]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            std::iter::once(name.clone())
                .chain(columns.iter().map(|c| percent(c.value(r))))
                .collect()
        })
        .collect();
    let header: Vec<String> = std::iter::once(label.to_owned())
        .chain(columns.iter().map(|c| c.header().to_owned()))
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| cells.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| -> String {
        let mut s = format!("{:<w$}", row[0], w = widths[0]);
        for (cell, w) in row[1..].iter().zip(&widths[1..]) {
            let _ = write!(s, "  {cell:>w$}");
        }
        s.push('\n');
        s
    };
    let mut out = line(&header);
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
    }
    out
}

/// CSV with raw ratios (empty field when absent) plus the MaxF threshold.
pub fn metrics_csv(label: &str, rows: &[(String, MetricsReport)]) -> String {
    let all = [
        Column::MaxF,
        Column::Ap,
        Column::Precision,
        Column::Recall,
        Column::Fpr,
        Column::Fnr,
        Column::Accuracy,
    ];
    let mut out = label.to_owned();
    for c in all {
        let _ = write!(out, ",{}", c.header());
    }
    out.push_str(",threshold\n");
    let field = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:e}"));
    for (name, r) in rows {
        out.push_str(name);
        for c in all {
            let _ = write!(out, ",{}", field(c.value(r)));
        }
        let _ = writeln!(out, ",{}", field(r.threshold));
    }
    out
}
