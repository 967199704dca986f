use std::fmt::Write as _;

/// One check at one point (or one integral).
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub check: String,
    pub k: usize,
    pub point_or_integral: String,
    pub residual: f64,
    pub scale: f64,
    pub tolerance: f64,
}

impl Row {
    pub fn new(check: &str, k: usize, where_: String, residual: f64, scale: f64, tolerance: f64) -> Self {
        Row { check: check.into(), k, point_or_integral: where_, residual, scale, tolerance }
    }

    /// `residual / scale`, zero when the residual vanishes exactly.
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.scale
        }
    }

    pub fn passed(&self) -> bool {
        self.relative() <= self.tolerance
    }
}

/// Coordinates joined with `;` so CSV fields never need quoting.
pub fn point_label(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";")
}

pub const INTEGRAL: &str = "integral";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

impl Report {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(Row::passed)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.passed()).count()
    }

    pub fn emit(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => self.csv(),
            Format::Text => self.text().into_bytes(),
        }
    }

    fn csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["check", "k", "point_or_integral", "residual", "scale", "relative", "tolerance", "pass"];
        // writing into a Vec cannot fail
        w.write_record(header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record([
                r.check.clone(),
                r.k.to_string(),
                r.point_or_integral.clone(),
                format!("{:e}", r.residual),
                format!("{:e}", r.scale),
                format!("{:e}", r.relative()),
                format!("{:e}", r.tolerance),
                if r.passed() { "pass" } else { "fail" }.to_string(),
            ])
            .expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }

    /// Per-check summary followed by the worst rows.
    fn text(&self) -> String {
        let mut out = String::new();
        let mut keys: Vec<(&str, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.check.as_str(), r.k)) {
                keys.push((r.check.as_str(), r.k));
            }
        }
        for (check, k) in keys {
            let rows: Vec<&Row> = self.rows.iter().filter(|r| r.check == check && r.k == k).collect();
            let worst = rows.iter().map(|r| r.relative()).fold(0.0, f64::max);
            let failed = rows.iter().filter(|r| !r.passed()).count();
            let _ = writeln!(
                out,
                "{check:<22} k={k}  rows={:<5} failed={failed:<5} worst relative={worst:.3e} (tol {:.0e})",
                rows.len(),
                rows[0].tolerance
            );
        }
        let mut worst: Vec<&Row> = self.rows.iter().collect();
        worst.sort_by(|a, b| (b.relative() / b.tolerance).total_cmp(&(a.relative() / a.tolerance)));
        if !worst.is_empty() {
            out.push_str("\nworst offenders:\n");
            for r in worst.iter().take(5) {
                let _ = writeln!(
                    out,
                    "  {} k={} at {}: residual {:.3e}, scale {:.3e}, relative {:.3e} [{}]",
                    r.check,
                    r.k,
                    r.point_or_integral,
                    r.residual,
                    r.scale,
                    r.relative(),
                    if r.passed() { "pass" } else { "fail" }
                );
            }
        }
        let _ = writeln!(out, "\n{} checks, {} failed", self.rows.len(), self.failures());
        out
    }
}
