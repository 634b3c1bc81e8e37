//! CSV tables and plain-text grid files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Scientific notation with three significant digits and a two-digit
/// exponent, e.g. `1.13e-02`.
pub fn sci3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.2e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", e.abs())
}

/// Round-trippable full precision.
pub fn full(x: f64) -> String {
    format!("{x:e}")
}

/// A CSV table kept as strings so that the rounded main file and the
/// full-precision sidecar share one layout.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Text(String),
    Int(u64),
    /// value shown with three significant digits in the main file
    Error(f64),
    /// value shown with `{:.7}` (mesh widths)
    Fixed(f64),
    /// value always shown in full precision
    Real(f64),
}

impl Cell {
    fn render(&self, rounded: bool) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Error(x) if rounded => sci3(*x),
            Cell::Fixed(x) if rounded => format!("{x:.7}"),
            Cell::Error(x) | Cell::Fixed(x) | Cell::Real(x) => full(*x),
        }
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, rounded: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.render(rounded)))?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    /// Writes `<stem>.csv` (rounded) and `<stem>.full.csv` (full precision).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let main = dir.join(format!("{stem}.csv"));
        fs::write(&main, self.to_csv(true)?).with_context(|| format!("writing {}", main.display()))?;
        let side = dir.join(format!("{stem}.full.csv"));
        fs::write(&side, self.to_csv(false)?).with_context(|| format!("writing {}", side.display()))?;
        Ok(main)
    }
}

/// Grid file: header `nx ny`, then `ny` lines of `nx` values in row-major
/// node order, 17 significant digits.
pub fn format_field(nx: usize, ny: usize, values: &[f64]) -> Result<String> {
    if values.len() != nx * ny {
        bail!("field has {} values, expected {nx} x {ny}", values.len());
    }
    let mut s = format!("{nx} {ny}\n");
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn emit_field(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, format_field(nx, ny, values)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_field(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut tokens = text.split_whitespace();
    let mut next_usize = || -> Result<usize> {
        tokens
            .next()
            .context("missing grid header")?
            .parse()
            .with_context(|| format!("bad grid header in {}", path.display()))
    };
    let nx = next_usize()?;
    let ny = next_usize()?;
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad value `{t}` in {}", path.display())))
        .collect::<Result<_>>()?;
    if values.len() != nx * ny {
        bail!("{}: expected {} values, found {}", path.display(), nx * ny, values.len());
    }
    Ok((nx, ny, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_digits() {
        assert_eq!(sci3(0.0113), "1.13e-02");
        assert_eq!(sci3(9.54e-3), "9.54e-03");
        assert_eq!(sci3(123.0), "1.23e+02");
        assert_eq!(sci3(0.0), "0.00e+00");
    }

    #[test]
    fn constant_field_on_one_cell() {
        let s = format_field(2, 2, &[1.0; 4]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("2 2"));
        let vals: Vec<f64> = lines.flat_map(|l| l.split_whitespace()).map(|t| t.parse().unwrap()).collect();
        assert_eq!(vals, vec![1.0; 4]);
    }

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.grid");
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.731).sin() / 3.0).collect();
        emit_field(&path, 4, 3, &vals).unwrap();
        let (nx, ny, back) = read_field(&path).unwrap();
        assert_eq!((nx, ny), (4, 3));
        assert_eq!(back, vals);
    }

    #[test]
    fn csv_layouts_match() {
        let mut t = Table::new(&["h", "err"]);
        t.push(vec![Cell::Fixed(0.047140452079103), Cell::Error(0.011312345)]);
        assert_eq!(t.to_csv(true).unwrap(), "h,err\n0.0471405,1.13e-02\n");
        assert!(t.to_csv(false).unwrap().contains("1.1312345e-2"));
    }
}
