use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Lower-triangular accuracy matrix: `row(i)[j]` is the test accuracy on task
/// `j` after training through task `i` (both zero-based here).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerformanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from complete lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = PerformanceMatrix::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the next training stage; it must hold one entry per task seen.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Contract(format!(
                "matrix row {} needs {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `A[i][j]`, `None` above the diagonal or past the last stage.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,accuracy\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{:?}", i + 1, j + 1, v).unwrap();
            }
        }
        out
    }

    /// Parses `i,j,accuracy` rows (one-based, any order, optional header).
    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('i')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: &str| Error::parse(origin, ln + 1, msg);
            if fields.len() != 3 {
                return Err(bad("expected i,j,accuracy"));
            }
            let i: usize = fields[0].parse().map_err(|_| bad("bad row index"))?;
            let j: usize = fields[1].parse().map_err(|_| bad("bad column index"))?;
            let v: f64 = fields[2].parse().map_err(|_| bad("bad accuracy"))?;
            if i == 0 || j == 0 || j > i {
                return Err(bad("cell outside the lower triangle"));
            }
            cells.push((i, j, v));
        }
        let n = cells.iter().map(|c| c.0).max().unwrap_or(0);
        let mut rows: Vec<Vec<Option<f64>>> = (1..=n).map(|i| vec![None; i]).collect();
        for (i, j, v) in cells {
            let slot = &mut rows[i - 1][j - 1];
            if slot.is_some() {
                return Err(Error::Format(format!("duplicate cell ({i}, {j})")));
            }
            *slot = Some(v);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.into_iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or_else(|| Error::Format(format!("missing cell ({}, {})", i + 1, j + 1)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PerformanceMatrix::from_rows(rows)
    }
}

/// Mean of the final row.
pub fn accuracy_avg(m: &PerformanceMatrix) -> Result<f64> {
    let last = m
        .rows
        .last()
        .ok_or_else(|| Error::Contract("accuracy of an empty matrix".into()))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean over `i < n` of `A[n][i] - A[i][i]`; `None` when fewer than two tasks.
pub fn forgetting_avg(m: &PerformanceMatrix) -> Option<f64> {
    let n = m.n_tasks();
    if n < 2 {
        return None;
    }
    let last = &m.rows[n - 1];
    let total: f64 = (0..n - 1).map(|i| last[i] - m.rows[i][i]).sum();
    Some(total / (n - 1) as f64)
}

/// Heatmap with one `<rect class="cell">` per defined entry; shade is linear in
/// accuracy from white to full tone.
pub fn matrix_svg(m: &PerformanceMatrix) -> String {
    const CELL: usize = 48;
    const PAD: usize = 28;
    let n = m.n_tasks();
    let size = PAD + n * CELL + 4;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    for k in 0..n {
        let c = PAD + k * CELL + CELL / 2;
        writeln!(out, r#"<text x="{c}" y="{}" text-anchor="middle">{}</text>"#, PAD - 8, k + 1).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 6, c + 4, k + 1).unwrap();
    }
    for (i, row) in m.rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = |full: f64| (255.0 - v * (255.0 - full)).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(8.0), shade(48.0), shade(107.0));
            let (x, y) = (PAD + j * CELL, PAD + i * CELL);
            writeln!(
                out,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>A[{}][{}] = {v:.4}</title></rect>"#,
                i + 1,
                j + 1
            )
            .unwrap();
            let ink = if v > 0.55 { "#ffffff" } else { "#000000" };
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{:.1}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4,
                100.0 * v
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn emit_matrix(m: &PerformanceMatrix, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), m.to_csv())?;
    std::fs::write(dir.join(format!("{stem}.svg")), matrix_svg(m))?;
    Ok(())
}
