//! Run artifacts and their on-disk layout: `report.txt`, `results.csv`,
//! `plotdata/*.csv` and `plotdata/plots.json`.

use std::fs;
use std::path::Path;

use serde::Serialize;

pub const PLOTS_SCHEMA: &str = "polling-lab-plots/1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> std::io::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotInfo {
    pub file: String,
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub info: PlotInfo,
    pub table: Table,
}

impl Plot {
    pub fn new(name: &str, title: &str, x: &str, y: &[&str]) -> Self {
        let mut header = vec![x];
        header.extend_from_slice(y);
        Self {
            info: PlotInfo {
                file: format!("{name}.csv"),
                title: title.to_string(),
                x: x.to_string(),
                y: y.iter().map(|s| s.to_string()).collect(),
            },
            table: Table::new(&header),
        }
    }
}

/// Results row layout shared by every command.
pub const RESULTS_HEADER: [&str; 6] = ["quantity", "value", "std_error", "reference", "tolerance", "status"];

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub report: Vec<String>,
    pub results: Table,
    pub plots: Vec<Plot>,
    /// Event trace of the first replication.
    pub trace: Option<String>,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self { report: Vec::new(), results: Table::new(&RESULTS_HEADER), plots: Vec::new(), trace: None }
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl Artifacts {
    pub fn line(&mut self, s: impl Into<String>) {
        self.report.push(s.into());
    }

    /// A plain value row.
    pub fn value(&mut self, quantity: &str, value: f64) {
        self.row(quantity, Some(value), None, None, None, "");
    }

    pub fn row(
        &mut self,
        quantity: &str,
        value: Option<f64>,
        std_error: Option<f64>,
        reference: Option<f64>,
        tolerance: Option<f64>,
        status: &str,
    ) {
        self.results.push(vec![
            quantity.to_string(),
            opt(value),
            opt(std_error),
            opt(reference),
            opt(tolerance),
            status.to_string(),
        ]);
    }

    /// Writes everything under `dir`, prefixing the report with the tool
    /// version, command and configuration hash.
    pub fn write(&self, dir: &Path, preamble: &[String]) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut report = preamble.join("\n");
        report.push_str("\n\n");
        for l in &self.report {
            report.push_str(l);
            report.push('\n');
        }
        fs::write(dir.join("report.txt"), report)?;
        fs::write(dir.join("results.csv"), self.results.to_csv()?)?;
        let plot_dir = dir.join("plotdata");
        fs::create_dir_all(&plot_dir)?;
        for p in &self.plots {
            fs::write(plot_dir.join(&p.info.file), p.table.to_csv()?)?;
        }
        #[derive(Serialize)]
        struct Sidecar<'a> {
            schema: &'a str,
            plots: Vec<&'a PlotInfo>,
        }
        let sidecar = Sidecar { schema: PLOTS_SCHEMA, plots: self.plots.iter().map(|p| &p.info).collect() };
        let mut json = serde_json::to_string_pretty(&sidecar).map_err(std::io::Error::other)?;
        json.push('\n');
        fs::write(plot_dir.join("plots.json"), json)?;
        if let Some(t) = &self.trace {
            fs::write(dir.join("trace.csv"), t)?;
        }
        Ok(())
    }
}
