use std::fmt::Write as _;

use super::grid::{CellMetrics, GridReport, GridRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Delimited,
}

pub const COLUMNS: [&str; 12] = [
    "source",
    "depth",
    "seed",
    "fraction",
    "dev_ppl",
    "test_word_ppl",
    "test_char_ppl",
    "lambda",
    "interp_ppl",
    "mean_cosine",
    "best",
    "status",
];

const BASELINE: &str = "-";
const MISSING: &str = "-";
const OK: &str = "ok";
const FAILED: &str = "failed: ";

/// Index of the lowest test word perplexity among successful rows of each
/// data fraction.
fn best_rows(report: &GridReport) -> Vec<bool> {
    let mut best = vec![false; report.rows.len()];
    let mut seen: Vec<f64> = Vec::new();
    for row in &report.rows {
        if seen.contains(&row.data_fraction) {
            continue;
        }
        seen.push(row.data_fraction);
        let winner = report
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.data_fraction == row.data_fraction)
            .filter_map(|(i, r)| r.metrics().map(|m| (i, m.test_word_ppl)))
            .fold(None, |acc: Option<(usize, f64)>, (i, p)| match acc {
                Some((_, q)) if q <= p => acc,
                _ => Some((i, p)),
            });
        if let Some((i, _)) = winner {
            best[i] = true;
        }
    }
    best
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| x.to_string())
}

/// Cells in column order; floats use the shortest exact decimal form.
fn fields(row: &GridRow, best: bool) -> Vec<String> {
    let mut f = vec![
        row.source.as_deref().map_or_else(|| BASELINE.to_string(), escape),
        row.depth.to_string(),
        row.seed.to_string(),
        row.data_fraction.to_string(),
    ];
    match &row.outcome {
        Ok(m) => {
            f.extend([m.dev_ppl, m.test_word_ppl, m.test_char_ppl].map(|x| x.to_string()));
            f.extend([m.lambda, m.interp_ppl, m.mean_cosine].map(opt));
        }
        Err(_) => f.extend(std::iter::repeat(MISSING.to_string()).take(6)),
    }
    f.push(if best { "*" } else { "" }.to_string());
    f.push(match &row.outcome {
        Ok(_) => OK.to_string(),
        Err(e) => format!("{FAILED}{}", escape(e)),
    });
    f
}

fn short(x: &str) -> String {
    match x.parse::<f64>() {
        Ok(v) if x.contains('.') || x.contains('e') => format!("{v:.4}"),
        _ => x.to_string(),
    }
}

pub fn render_report(report: &GridReport, format: ReportFormat) -> String {
    let best = best_rows(report);
    let rows: Vec<Vec<String>> = report.rows.iter().zip(&best).map(|(r, &b)| fields(r, b)).collect();
    let mut out = String::new();
    match format {
        ReportFormat::Delimited => {
            out.push_str(&COLUMNS.join("\t"));
            out.push('\n');
            for r in rows {
                out.push_str(&r.join("\t"));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let rows: Vec<Vec<String>> = rows
                .into_iter()
                .map(|r| r.iter().enumerate().map(|(i, c)| if (4..10).contains(&i) { short(c) } else { c.clone() }).collect())
                .collect();
            let widths: Vec<usize> = (0..COLUMNS.len())
                .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
                .collect();
            let line = |cells: Vec<&str>| {
                let mut s = String::new();
                for (i, c) in cells.iter().enumerate() {
                    if i + 1 == cells.len() {
                        s.push_str(c);
                    } else if (1..10).contains(&i) {
                        let _ = write!(s, "{c:>w$}  ", w = widths[i]);
                    } else {
                        let _ = write!(s, "{c:<w$}  ", w = widths[i]);
                    }
                }
                s.trim_end().to_string()
            };
            out.push_str(&line(COLUMNS.to_vec()));
            out.push('\n');
            for r in &rows {
                out.push_str(&line(r.iter().map(String::as_str).collect()));
                out.push('\n');
            }
        }
    }
    out
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("line {line}: bad number {s:?}")))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s == MISSING {
        Ok(None)
    } else {
        parse_f64(s, line).map(Some)
    }
}

/// Reads the delimited format back. The `best` column is derived and is
/// not checked.
pub fn parse_report(text: &str) -> Result<GridReport> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == COLUMNS.join("\t") => {}
        _ => return Err(Error::Format("missing or unexpected report header".into())),
    }
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != COLUMNS.len() {
            return Err(Error::Format(format!("line {n}: expected {} fields, found {}", COLUMNS.len(), f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Format(format!("line {n}: bad integer {s:?}")));
        let outcome = if f[11] == OK {
            Ok(CellMetrics {
                dev_ppl: parse_f64(f[4], n)?,
                test_word_ppl: parse_f64(f[5], n)?,
                test_char_ppl: parse_f64(f[6], n)?,
                lambda: parse_opt(f[7], n)?,
                interp_ppl: parse_opt(f[8], n)?,
                mean_cosine: parse_opt(f[9], n)?,
            })
        } else if let Some(msg) = f[11].strip_prefix(FAILED) {
            Err(unescape(msg))
        } else {
            return Err(Error::Format(format!("line {n}: bad status {:?}", f[11])));
        };
        rows.push(GridRow {
            source: if f[0] == BASELINE { None } else { Some(unescape(f[0])) },
            depth: int(f[1])? as usize,
            seed: int(f[2])?,
            data_fraction: parse_f64(f[3], n)?,
            outcome,
        });
    }
    Ok(GridReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(ppl: f64) -> CellMetrics {
        CellMetrics {
            dev_ppl: ppl + 1.0,
            test_word_ppl: ppl,
            test_char_ppl: 3.25,
            lambda: Some(0.375),
            interp_ppl: Some(ppl - 0.5),
            mean_cosine: None,
        }
    }

    fn sample() -> GridReport {
        GridReport {
            rows: vec![
                GridRow {
                    source: None,
                    depth: 0,
                    seed: 1,
                    data_fraction: 1.0,
                    outcome: Ok(CellMetrics {
                        lambda: None,
                        interp_ppl: None,
                        ..metrics(120.0)
                    }),
                },
                GridRow {
                    source: Some("et".into()),
                    depth: 2,
                    seed: 1,
                    data_fraction: 1.0,
                    outcome: Ok(metrics(100.0 / 3.0)),
                },
                GridRow {
                    source: Some("en".into()),
                    depth: 4,
                    seed: 1,
                    data_fraction: 1.0,
                    outcome: Err("non-finite value in\tepoch 3\nlogits".into()),
                },
            ],
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = GridReport::default();
        assert_eq!(render_report(&r, ReportFormat::Delimited), format!("{}\n", COLUMNS.join("\t")));
        assert_eq!(render_report(&r, ReportFormat::Text).lines().count(), 1);
        assert_eq!(parse_report(&render_report(&r, ReportFormat::Delimited)).unwrap(), r);
    }

    #[test]
    fn one_row_one_line() {
        let r = GridReport {
            rows: sample().rows[..1].to_vec(),
        };
        for f in [ReportFormat::Delimited, ReportFormat::Text] {
            assert_eq!(render_report(&r, f).lines().count(), 2);
        }
    }

    #[test]
    fn delimited_round_trip_and_best_mark() {
        let r = sample();
        let text = render_report(&r, ReportFormat::Delimited);
        assert_eq!(parse_report(&text).unwrap(), r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2].split('\t').nth(10), Some("*"));
        assert_eq!(lines[1].split('\t').nth(10), Some(""));
        assert_eq!(render_report(&r, ReportFormat::Delimited), text);
    }

    #[test]
    fn text_table_is_aligned() {
        let text = render_report(&sample(), ReportFormat::Text);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("source"));
        assert!(lines[2].contains("33.3333"));
        assert!(lines[3].contains("failed:"));
        let col = lines[0].find("depth").unwrap() + "depth".len();
        assert!(lines[1..].iter().all(|l| l[..col].ends_with(|c: char| c.is_ascii_digit())));
    }

    #[test]
    fn rejects_malformed_reports() {
        assert!(parse_report("").is_err());
        assert!(parse_report("a\tb\n").is_err());
        let mut bad = render_report(&sample(), ReportFormat::Delimited);
        bad.push_str("x\t1\n");
        assert!(matches!(parse_report(&bad), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn arbitrary_reports_round_trip(
            cells in proptest::collection::vec(
                (proptest::option::of("[a-z\\\\\t ]{1,6}"), 0usize..5, 0u64..100, 0.01f64..1.0,
                 proptest::num::f64::POSITIVE, proptest::option::of(0.0f64..1.0), any::<bool>()),
                0..8)
        ) {
            let rows = cells.into_iter().map(|(source, depth, seed, fraction, ppl, lambda, ok)| GridRow {
                source: source.filter(|s| s != BASELINE),
                depth,
                seed,
                data_fraction: fraction,
                outcome: if ok {
                    Ok(CellMetrics { dev_ppl: ppl, test_word_ppl: ppl, test_char_ppl: ppl, lambda, interp_ppl: lambda, mean_cosine: lambda })
                } else {
                    Err(format!("failed\t{ppl}"))
                },
            }).collect();
            let r = GridReport { rows };
            prop_assert_eq!(parse_report(&render_report(&r, ReportFormat::Delimited)).unwrap(), r);
        }
    }
}
