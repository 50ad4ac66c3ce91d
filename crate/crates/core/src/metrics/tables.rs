//! Aligned-text renderings of AUC, correlation and dataset overviews.

use super::aggregate::{EvalReport, LabelSummary};
use crate::data::labels::{DISPLAY_NAMES, NUM_PATHOLOGIES};
use crate::model::Variant;

pub struct AucColumn {
    pub header: String,
    pub report: EvalReport,
}

pub struct ColumnGroup {
    pub title: String,
    pub columns: Vec<AucColumn>,
}

#[derive(Clone, Copy, Debug)]
pub struct CellStyle {
    /// Multiplier applied to means and standard deviations.
    pub scale: f64,
    pub decimals: usize,
    /// Append `± std` when a spread is available.
    pub spread: bool,
}

/// Cross-validated overview: values x100 with one decimal.
pub const CROSS_VALIDATED: CellStyle = CellStyle {
    scale: 100.0,
    decimals: 1,
    spread: true,
};

/// Single-split overview: raw AUC with three decimals.
pub const SINGLE_SPLIT: CellStyle = CellStyle {
    scale: 1.0,
    decimals: 3,
    spread: false,
};

fn cell(s: &LabelSummary, style: CellStyle) -> String {
    let d = style.decimals;
    match (s.mean, s.std) {
        (None, _) => "-".into(),
        (Some(m), Some(sd)) if style.spread => format!("{:.d$} ± {:.d$}", m * style.scale, sd * style.scale),
        (Some(m), _) => format!("{:.d$}", m * style.scale),
    }
}

fn pad(s: &str, width: usize) -> String {
    let n = s.chars().count();
    format!("{s}{}", " ".repeat(width.saturating_sub(n)))
}

struct Grid {
    /// Header lines (group titles, column names) and body rows; `None`
    /// marks a horizontal rule.
    rows: Vec<Option<Vec<String>>>,
    /// Column indices that start a new group and get a `|` in front.
    group_starts: Vec<usize>,
}

impl Grid {
    fn render(&self) -> String {
        let cols = self.rows.iter().flatten().map(|r| r.len()).max().unwrap_or(0);
        let mut widths = vec![0usize; cols];
        for r in self.rows.iter().flatten() {
            for (i, c) in r.iter().enumerate() {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in &self.rows {
            let line = match r {
                None => {
                    let mut l = String::new();
                    for (i, w) in widths.iter().enumerate() {
                        if self.group_starts.contains(&i) {
                            l.push_str("-+-");
                        } else if i > 0 {
                            l.push_str("--");
                        }
                        l.push_str(&"-".repeat(*w));
                    }
                    l
                }
                Some(cells) => {
                    let mut l = String::new();
                    for (i, w) in widths.iter().enumerate() {
                        if self.group_starts.contains(&i) {
                            l.push_str(" | ");
                        } else if i > 0 {
                            l.push_str("  ");
                        }
                        l.push_str(&pad(cells.get(i).map(String::as_str).unwrap_or(""), *w));
                    }
                    l.trim_end().to_string()
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Pathology rows, then Average, then No Findings; one column per report.
pub fn render_auc_table(groups: &[ColumnGroup], style: CellStyle) -> String {
    let mut group_starts = Vec::new();
    let mut titles = vec![String::new()];
    let mut headers = vec!["Pathology".to_string()];
    for g in groups {
        group_starts.push(headers.len());
        for (i, c) in g.columns.iter().enumerate() {
            titles.push(if i == 0 { g.title.clone() } else { String::new() });
            headers.push(c.header.clone());
        }
    }
    let columns: Vec<&EvalReport> = groups.iter().flat_map(|g| g.columns.iter().map(|c| &c.report)).collect();
    let mut rows = Vec::new();
    if groups.iter().any(|g| !g.title.is_empty()) {
        rows.push(Some(titles));
    }
    rows.push(Some(headers));
    rows.push(None);
    for (k, name) in DISPLAY_NAMES[..NUM_PATHOLOGIES].iter().enumerate() {
        let mut r = vec![name.to_string()];
        r.extend(columns.iter().map(|rep| cell(&rep.labels[k], style)));
        rows.push(Some(r));
    }
    rows.push(None);
    let mut avg = vec!["Average".to_string()];
    avg.extend(columns.iter().map(|rep| cell(&rep.average, style)));
    rows.push(Some(avg));
    let mut nf = vec![DISPLAY_NAMES[NUM_PATHOLOGIES].to_string()];
    nf.extend(columns.iter().map(|rep| cell(&rep.labels[NUM_PATHOLOGIES], style)));
    rows.push(Some(nf));
    Grid { rows, group_starts }.render()
}

/// Symmetric correlation matrix with `-` on the diagonal. `groups` names
/// consecutive blocks of models.
pub fn render_correlation_table(groups: &[(String, Vec<String>)], matrix: &[Vec<f64>]) -> String {
    let names: Vec<(&str, &str)> = groups
        .iter()
        .flat_map(|(g, ms)| ms.iter().enumerate().map(move |(i, m)| (if i == 0 { g.as_str() } else { "" }, m.as_str())))
        .collect();
    let mut group_starts = Vec::new();
    let mut titles = vec![String::new(), String::new()];
    let mut headers = vec![String::new(), String::new()];
    for (g, ms) in groups {
        group_starts.push(headers.len());
        for (i, m) in ms.iter().enumerate() {
            titles.push(if i == 0 { g.clone() } else { String::new() });
            headers.push(m.clone());
        }
    }
    group_starts.insert(0, 2);
    group_starts.dedup();
    let mut rows = vec![Some(titles), Some(headers), None];
    for (i, (g, m)) in names.iter().enumerate() {
        if i > 0 && !g.is_empty() {
            rows.push(None);
        }
        let mut r = vec![g.to_string(), m.to_string()];
        for j in 0..names.len() {
            r.push(if i == j {
                "-".into()
            } else {
                matrix[i].get(j).map(|v| format!("{v:.2}")).unwrap_or_else(|| "?".into())
            });
        }
        rows.push(Some(r));
    }
    Grid { rows, group_starts }.render()
}

/// Splits a model tag such as `ResNet-38-large-meta` into the network name
/// (`ResNet-38`) and the setup suffix (`-large-meta`).
pub fn split_tag(tag: &str) -> (&str, &str) {
    let digits_end = tag
        .strip_prefix("ResNet-")
        .map(|rest| 7 + rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len()));
    match digits_end {
        Some(end) => tag.split_at(end),
        None => (tag, ""),
    }
}

/// Variant and metadata flag encoded in a model tag.
pub fn tag_setup(tag: &str) -> Option<(Variant, bool)> {
    let (_, suffix) = split_tag(tag);
    let mut parts = suffix.split('-').filter(|p| !p.is_empty());
    let variant: Variant = parts.next()?.parse().ok()?;
    Some((variant, parts.any(|p| p == "meta")))
}

/// Groups reports keyed by (variant, uses meta) into the
/// without/with-non-image-features layout; absent setups are skipped.
pub fn variant_grid(reports: &[(Variant, bool, EvalReport)]) -> Vec<ColumnGroup> {
    [(false, "Without non-image features"), (true, "With non-image features")]
        .into_iter()
        .map(|(meta, title)| ColumnGroup {
            title: title.to_string(),
            columns: Variant::ALL
                .iter()
                .filter_map(|v| {
                    reports.iter().find(|(rv, rm, _)| rv == v && *rm == meta).map(|(_, _, r)| AucColumn {
                        header: v.label().to_string(),
                        report: r.clone(),
                    })
                })
                .collect(),
        })
        .filter(|g| !g.columns.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::aggregate::{aggregate_folds, EvalRow};
    use crate::model::NUM_LABELS;

    fn report(v: f64) -> EvalReport {
        let rows: Vec<EvalRow> = (0..5)
            .map(|f| EvalRow {
                fold: f,
                aucs: vec![Some(v + 0.01 * f as f64); NUM_LABELS],
            })
            .collect();
        aggregate_folds("m", &rows).unwrap()
    }

    #[test]
    fn auc_table_rows() {
        let reports = vec![
            (Variant::OffTheShelf, false, report(0.7)),
            (Variant::Large, false, report(0.8)),
            (Variant::Large, true, report(0.82)),
        ];
        let text = render_auc_table(&variant_grid(&reports), CROSS_VALIDATED);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("Without non-image features") && lines[0].contains("With non-image features"));
        assert!(lines[1].starts_with("Pathology") && lines[1].contains("OTS") && lines[1].contains("large"));
        assert!(lines[3].starts_with("Cardiomegaly") && lines[3].contains("72.0 ± 1.6"));
        assert!(text.contains("Pleural Thicken."));
        let tail: Vec<&str> = lines.iter().rev().take(2).copied().collect();
        assert!(tail[1].starts_with("Average") && tail[0].starts_with("No Findings"));
        assert_eq!(lines.len(), 2 + 1 + 14 + 1 + 2);
    }

    #[test]
    fn tags_parse() {
        assert_eq!(split_tag("ResNet-38-large-meta"), ("ResNet-38", "-large-meta"));
        assert_eq!(split_tag("ResNet-101"), ("ResNet-101", ""));
        assert_eq!(tag_setup("ResNet-50-OTS-meta-w4"), Some((Variant::OffTheShelf, true)));
        assert_eq!(tag_setup("ResNet-50-1channel"), Some((Variant::OneChannel, false)));
        assert_eq!(tag_setup("custom"), None);
    }

    #[test]
    fn single_split_cells() {
        let row = EvalRow {
            fold: 0,
            aucs: vec![Some(0.8061); NUM_LABELS],
        };
        let r = EvalReport::single("ResNet-38-large-meta", &row).unwrap();
        let groups = vec![ColumnGroup {
            title: "-large-meta".into(),
            columns: vec![AucColumn {
                header: "ResNet-38".into(),
                report: r,
            }],
        }];
        let text = render_auc_table(&groups, SINGLE_SPLIT);
        assert!(text.lines().any(|l| l.starts_with("Average") && l.ends_with("0.806")));
    }

    #[test]
    fn correlation_layout() {
        let groups = vec![
            ("Without".to_string(), vec!["OTS".to_string(), "FT".to_string()]),
            ("With".to_string(), vec!["OTS".to_string()]),
        ];
        let m = vec![vec![1.0, 0.65, 0.46], vec![0.65, 1.0, 0.38], vec![0.46, 0.38, 1.0]];
        let text = render_correlation_table(&groups, &m);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[3].starts_with("Without") && lines[3].contains("-") && lines[3].contains("0.65"));
        assert!(lines[5].starts_with("---") && lines[6].starts_with("With"));
        assert!(text.contains("0.38"));
    }
}
