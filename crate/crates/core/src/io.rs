//! CSV tables and MBEF field snapshots.
//!
//! MBEF layout (all little-endian): `b"MBEF"`, version `u32`, dims `u32`,
//! J `u32`, L `f64`, then `J^dims` `f64` values in storage order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const MBEF_MAGIC: &[u8; 4] = b"MBEF";
pub const MBEF_VERSION: u32 = 1;
const MBEF_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

pub const DIAGNOSTICS_HEADER: [&str; 5] = ["t", "energy", "roughness", "mean_u", "max_grad"];

/// A row of a CSV table with a fixed header.
pub trait CsvRow {
    fn header() -> &'static [&'static str];
    /// Cells in header order; `None` is written as an empty cell.
    fn cells(&self) -> Vec<Option<String>>;
}

/// Scientific notation with 17 significant digits, enough to round-trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl CsvRow for DiagnosticsRecord {
    fn header() -> &'static [&'static str] {
        &DIAGNOSTICS_HEADER
    }

    fn cells(&self) -> Vec<Option<String>> {
        [self.t, self.energy, self.roughness, self.mean_u, self.max_grad]
            .iter()
            .map(|v| Some(format_float(*v)))
            .collect()
    }
}

/// Renders rows as CSV text with LF line endings.
pub fn table_to_string<R: CsvRow>(rows: &[R]) -> String {
    let mut out = R::header().join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.cells().into_iter().map(Option::unwrap_or_default).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_table_csv<R: CsvRow>(rows: &[R], path: &Path) -> Result<()> {
    write_text(path, &table_to_string(rows))
}

pub fn write_diagnostics_csv(records: &[DiagnosticsRecord], path: &Path) -> Result<()> {
    write_table_csv(records, path)
}

/// Numeric columns of a CSV file, keyed by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvColumns {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvColumns {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Format(format!("no column named {name:?}")))
    }
}

/// Parses a CSV of numbers. Empty cells read as NaN.
pub fn parse_csv_columns(text: &str) -> Result<CsvColumns> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        for (col, cell) in columns.iter_mut().zip(record.iter()) {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}: {cell:?} is not a number", n + 2))
                })?
            };
            col.push(v);
        }
    }
    Ok(CsvColumns { headers, columns })
}

pub fn read_csv_columns(path: &Path) -> Result<CsvColumns> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_columns(&text)
}

pub fn encode_snapshot(field: &Field) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(MBEF_HEADER_LEN + 8 * g.len());
    out.extend_from_slice(MBEF_MAGIC);
    out.extend_from_slice(&MBEF_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dims() as u32).to_le_bytes());
    out.extend_from_slice(&(g.nodes() as u32).to_le_bytes());
    out.extend_from_slice(&g.half_period().to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < MBEF_HEADER_LEN || &bytes[..4] != MBEF_MAGIC {
        return Err(Error::Format("not an MBEF snapshot".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != MBEF_VERSION {
        return Err(Error::Format(format!("unsupported MBEF version {version}")));
    }
    let dims = u32_at(8) as usize;
    let nodes = u32_at(12) as usize;
    let half_period = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let grid = Grid::new(dims, nodes, half_period)
        .map_err(|e| Error::Format(format!("bad MBEF header: {e}")))?;
    let body = &bytes[MBEF_HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "MBEF body has {} bytes, expected {}",
            body.len(),
            8 * grid.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    // Snapshots may legitimately hold non-finite values from a failed run.
    Ok(Field::from_values_unchecked(grid, values))
}

pub fn write_snapshot(field: &Field, path: &Path) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_snapshot(field))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_function;
    use proptest::prelude::*;

    fn rec(t: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            energy: 1.0 / 3.0,
            roughness: 1e-300,
            mean_u: -0.0,
            max_grad: std::f64::consts::PI,
        }
    }

    #[test]
    fn empty_diagnostics_is_header_only() {
        let s = table_to_string::<DiagnosticsRecord>(&[]);
        assert_eq!(s, "t,energy,roughness,mean_u,max_grad\n");
    }

    #[test]
    fn diagnostics_lines_are_lf_and_parse_back() {
        let rows = [rec(0.0), rec(0.1)];
        let s = table_to_string(&rows);
        assert!(!s.contains('\r'));
        assert_eq!(s.lines().count(), 3);
        let cols = parse_csv_columns(&s).unwrap();
        assert_eq!(cols.column("t").unwrap(), &[0.0, 0.1]);
        assert_eq!(cols.column("energy").unwrap()[1].to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(cols.column("mean_u").unwrap()[0].to_bits(), (-0.0f64).to_bits());
        assert!(cols.column("nope").is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_through_text(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back: f64 = format_float(v).parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn bad_cells_are_reported() {
        assert!(parse_csv_columns("a,b\n1,x\n").is_err());
        let cols = parse_csv_columns("a,b\n1,\n").unwrap();
        assert!(cols.column("b").unwrap()[0].is_nan());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for dims in [1, 2] {
            let g = Grid::new(dims, 16, 2.5).unwrap();
            let f = sample_function(&g, |x, y| (x * 1.3).sin() * (0.7 * y).cos() + 1e-17 * x).unwrap();
            let path = dir.path().join(format!("sub/f{dims}.mbef"));
            write_snapshot(&f, &path).unwrap();
            let back = read_snapshot(&path).unwrap();
            assert_eq!(back.grid(), f.grid());
            let bits = |f: &Field| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&f));
        }
    }

    #[test]
    fn snapshot_header_layout() {
        let g = Grid::new(2, 4, 1.5).unwrap();
        let bytes = encode_snapshot(&Field::constant(g, 2.0));
        assert_eq!(bytes.len(), 24 + 16 * 8);
        assert_eq!(&bytes[..4], b"MBEF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &2.0f64.to_le_bytes());
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let good = encode_snapshot(&Field::zeros(g));
        assert!(decode_snapshot(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_snapshot(&bad).is_err());
        let mut bad = good;
        bad[4] = 9;
        assert!(decode_snapshot(&bad).is_err());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.mbef");
        let err = read_snapshot(&missing).unwrap_err();
        assert!(err.to_string().contains("absent.mbef"), "{err}");
        assert_eq!(err.kind(), crate::ErrorKind::Io);
    }
}
