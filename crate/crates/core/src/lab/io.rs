//! Rate-experiment outputs: the rows CSV and the JSON report.
//!
//! CSV schema (fixed): header `n,rep,divergent,loss,errA,errB,errEta,errW,fn_dist`,
//! 17 significant digits, LF line endings.

use std::path::Path;

use crate::error::Result;

use super::{RateReport, RateRow};

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Serialize rows to the fixed CSV schema.
pub fn rows_to_csv(rows: &[RateRow]) -> String {
    let mut out = String::from("n,rep,divergent,loss,errA,errB,errEta,errW,fn_dist\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.n,
            row.rep,
            row.divergent,
            format_value(row.loss),
            format_value(row.err_a),
            format_value(row.err_b),
            format_value(row.err_eta),
            format_value(row.err_w),
            format_value(row.fn_dist),
        ));
    }
    out
}

/// Write `rows.csv` and `report.json` under `dir`, creating it if
/// needed.
pub fn write_rate_outputs(dir: &Path, report: &RateReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("rows.csv"), rows_to_csv(&report.rows))?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}
