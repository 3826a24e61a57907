//! Metric and history report writers: a structured text file plus
//! machine-readable CSV tables.

use std::io::Write;

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::stats::AnovaRow;
use crate::train::History;

/// CSV with one row per fold plus mean/std aggregate rows.
pub fn write_metrics_csv<W: Write>(report: &MetricsReport, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["fold", "accuracy", "auc_roc", "f1"])?;
    for fold in &report.folds {
        out.write_record([
            fold.fold.to_string(),
            fold.accuracy.to_string(),
            fold.auc_roc.to_string(),
            fold.f1.to_string(),
        ])?;
    }
    out.write_record([
        "mean".to_string(),
        report.mean_accuracy.to_string(),
        report.mean_auc.to_string(),
        report.mean_f1.to_string(),
    ])?;
    out.write_record([
        "std".to_string(),
        report.std_accuracy.to_string(),
        report.std_auc.to_string(),
        report.std_f1.to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

/// Human-readable report: one record per fold plus the aggregate.
pub fn write_metrics_text<W: Write>(report: &MetricsReport, mut writer: W) -> Result<()> {
    for fold in &report.folds {
        writeln!(
            writer,
            "fold {}: accuracy {:.4}  auc_roc {:.4}  f1 {:.4}",
            fold.fold, fold.accuracy, fold.auc_roc, fold.f1
        )?;
    }
    writeln!(
        writer,
        "aggregate: accuracy {:.4} +/- {:.4}  auc_roc {:.4} +/- {:.4}  f1 {:.4} +/- {:.4}",
        report.mean_accuracy,
        report.std_accuracy,
        report.mean_auc,
        report.std_auc,
        report.mean_f1,
        report.std_f1
    )?;
    Ok(())
}

/// Per-epoch training history CSV.
pub fn write_history_csv<W: Write>(history: &History, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "lr"])?;
    for e in &history.epochs {
        out.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_accuracy.to_string(),
            e.val_loss.to_string(),
            e.val_accuracy.to_string(),
            e.lr.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// ANOVA results CSV: one row per (factor, AU, window) test.
pub fn write_anova_csv<W: Write>(rows: &[AnovaRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "factor",
        "au_id",
        "region",
        "window",
        "F",
        "df1",
        "df2",
        "p",
        "p_bonferroni",
    ])?;
    for row in rows {
        out.write_record([
            row.factor.clone(),
            row.au_id.to_string(),
            row.region.clone(),
            format!("{:.0}-{:.0}ms", row.window.0, row.window.1),
            row.table.f_stat.to_string(),
            row.table.df_between.to_string(),
            row.table.df_within.to_string(),
            row.table.p.to_string(),
            row.p_bonferroni.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Summary of AUs crossing the reporting thresholds, strongest first.
pub fn write_anova_summary<W: Write>(rows: &[AnovaRow], mut writer: W) -> Result<()> {
    for (label, threshold) in [("p < 0.005", 0.005), ("p < 0.05", 0.05)] {
        writeln!(writer, "AUs at {label}:")?;
        let mut any = false;
        for row in rows.iter().filter(|r| r.table.p < threshold) {
            any = true;
            writeln!(
                writer,
                "  AU {} ({}, {:.0}-{:.0} ms): F={:.2}, p={:.3e}",
                row.au_id, row.region, row.window.0, row.window.1, row.table.f_stat, row.table.p
            )?;
        }
        if !any {
            writeln!(writer, "  none")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FoldMetrics;
    use crate::stats::AnovaTable;

    fn sample_report() -> MetricsReport {
        MetricsReport::from_folds(
            (0..5)
                .map(|fold| FoldMetrics {
                    fold,
                    accuracy: 0.8 + fold as f64 * 0.01,
                    auc_roc: 0.85,
                    f1: 0.78,
                })
                .collect(),
        )
    }

    #[test]
    fn metrics_csv_has_fold_and_aggregate_rows() {
        let mut buf = Vec::new();
        write_metrics_csv(&sample_report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 + 2);
        assert!(text.lines().last().unwrap().starts_with("std,"));
    }

    #[test]
    fn text_report_has_fold_lines() {
        let mut buf = Vec::new();
        write_metrics_text(&sample_report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.contains("aggregate"));
    }

    #[test]
    fn anova_csv_and_summary() {
        let rows = vec![AnovaRow {
            factor: "label".into(),
            au_id: 6,
            region: "upper".into(),
            window: (0.0, 1500.0),
            table: AnovaTable {
                f_stat: 23.47,
                df_between: 1,
                df_within: 100,
                p: 1e-6,
                grouping: "fluent vs stuttered".into(),
            },
            p_bonferroni: 1.7e-5,
        }];
        let mut buf = Vec::new();
        write_anova_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("factor,au_id,region,window,F,df1,df2,p,p_bonferroni"));
        assert!(text.contains("label,6,upper,0-1500ms,23.47,1,100,"));

        let mut buf = Vec::new();
        write_anova_summary(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("AU 6"));
    }
}
