use super::metrics::{MetricReport, Summary};
use super::runner::{AblationRow, AblationTables, ScenarioRow};

fn pct(s: &Summary) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
}

/// Left-aligned columns separated by two spaces.
pub fn align_columns(rows: &[Vec<String>]) -> String {
    let n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| format!("{c}{}", " ".repeat(widths[j] - c.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn metric_table(report: &MetricReport) -> String {
    let mut rows = vec![vec!["metric".to_string(), "mean ± std (%)".into(), "per fold".into()]];
    for (name, s) in [("acc", &report.acc), ("f1", &report.f1), ("auc", &report.auc)] {
        let folds: Vec<String> = s.folds.iter().map(|v| format!("{:.4}", v)).collect();
        rows.push(vec![name.into(), pct(s), folds.join(" ")]);
    }
    format!("config {}\n{}", report.config_hash, align_columns(&rows))
}

/// Missing-modality scenarios, one row per (fraction, scenario).
pub fn scenario_table(rows: &[ScenarioRow]) -> String {
    let mut out = vec![vec![
        "missing".to_string(),
        "train".into(),
        "test".into(),
        "acc".into(),
        "f1".into(),
        "auc".into(),
    ]];
    for r in rows {
        let mut line = vec![
            format!("{:.0}%", 100.0 * r.fraction),
            r.scenario.train_label().into(),
            r.scenario.test_label().into(),
        ];
        match &r.report {
            Some(rep) => line.extend([pct(&rep.acc), pct(&rep.f1), pct(&rep.auc)]),
            None => line.extend(["NA".to_string(), "NA".into(), "NA".into()]),
        }
        out.push(line);
    }
    align_columns(&out)
}

fn mark(on: bool) -> String {
    if on { "yes" } else { "no" }.into()
}

fn ladder_rows(rows: &[AblationRow], with_recon: bool) -> Vec<Vec<String>> {
    let mut head = vec!["cma".to_string()];
    if with_recon {
        head.push("recon".into());
    }
    head.extend(["moe".to_string(), "align".into(), "auc".into(), "delta".into(), "config".into()]);
    let mut out = vec![head];
    for (i, r) in rows.iter().enumerate() {
        let c = r.components;
        let mut line = vec![mark(c.cma)];
        if with_recon {
            line.push(mark(c.recon));
        }
        line.extend([
            mark(c.moe),
            mark(c.align),
            pct(&r.report.auc),
            if i == 0 { String::new() } else { format!("{:+.2}", 100.0 * r.delta_auc) },
            r.config_hash.clone(),
        ]);
        out.push(line);
    }
    out
}

pub fn ablation_table(tables: &AblationTables) -> String {
    format!(
        "complete data\n{}\n{:.0}% missing per modality\n{}",
        align_columns(&ladder_rows(&tables.complete, false)),
        100.0 * tables.missing_fraction,
        align_columns(&ladder_rows(&tables.incomplete, true)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_line_up() {
        let t = align_columns(&[vec!["a".into(), "bb".into()], vec!["ccc".into(), "d".into()]]);
        assert_eq!(t, "a    bb\nccc  d\n");
    }
}
