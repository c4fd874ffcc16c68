use super::train::{SUMMARY_FILE, SUMMARY_HEADER};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// One row of a results table, read back from a run's summary file.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub path: PathBuf,
    pub fields: HashMap<String, String>,
}

impl SummaryRow {
    pub fn get(&self, key: &str) -> &str {
        self.fields.get(key).map_or("", String::as_str)
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every summary file below `dir`, in path order.
pub fn read_summaries(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    let mut rows = Vec::new();
    for path in paths {
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.iter().map(String::as_str).ne(SUMMARY_HEADER) {
            return Err(Error::Config(format!("{} has an unexpected header", path.display())));
        }
        for rec in r.records() {
            let rec = rec?;
            let fields = header.iter().cloned().zip(rec.iter().map(str::to_owned)).collect();
            rows.push(SummaryRow { path: path.clone(), fields });
        }
    }
    Ok(rows)
}

fn short(value: &str) -> String {
    value.parse::<f64>().map_or_else(|_| value.to_owned(), |v| format!("{v:.2e}"))
}

fn precond(value: &str) -> &str {
    match value {
        "none" => "✗",
        "frame_unstable" => "✓ (HᵀAH)",
        "frame_stable" => "✓ (DᵀCD)",
        other => other,
    }
}

/// Markdown table with columns Optimizer, Precond., Precision, MRE, MSE, Loss.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from("| Optimizer | Precond. | Precision | MRE | MSE | Loss |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.get("optimizer"),
            precond(r.get("preconditioning")),
            r.get("precision"),
            short(r.get("mre")),
            short(r.get("mse")),
            short(r.get("loss")),
        ));
    }
    s
}

pub fn report(dir: &Path) -> Result<String> {
    Ok(render_table(&read_summaries(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, opt: &str, pre: &str, mre: &str) {
        std::fs::create_dir_all(dir).unwrap();
        let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE)).unwrap();
        w.write_record(SUMMARY_HEADER).unwrap();
        w.write_record(["r", "fosls", opt, pre, "full", "f32", "6", "10", "8", "4", mre, "1e-3", "1.5e-5"]).unwrap();
        w.flush().unwrap();
    }

    #[test]
    fn renders_rows_in_path_order() {
        let tmp = tempfile::tempdir().unwrap();
        write(&tmp.path().join("b"), "SGD", "none", "0.5");
        write(&tmp.path().join("a/x"), "Adam", "frame_stable", "1.0123e-3");
        std::fs::write(tmp.path().join("notes.txt"), "ignored").unwrap();
        let table = report(tmp.path()).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "| Optimizer | Precond. | Precision | MRE | MSE | Loss |");
        assert_eq!(lines[2], "| Adam | ✓ (DᵀCD) | f32 | 1.01e-3 | 1.00e-3 | 1.50e-5 |");
        assert_eq!(lines[3], "| SGD | ✗ | f32 | 5.00e-1 | 1.00e-3 | 1.50e-5 |");
    }

    #[test]
    fn rejects_foreign_csv() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join(SUMMARY_FILE), "a,b\n1,2\n").unwrap();
        assert!(matches!(report(tmp.path()), Err(Error::Config(_))));
    }
}
