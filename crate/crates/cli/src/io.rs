//! CSV readers for the tabular input formats.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use flipchip_core::losses::ParticipationRecord;
use flipchip_core::resonator::ResonatorRecord;
use flipchip_core::vnafit::{Complex64, ComplexTrace};
use flipchip_core::Facing;

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header_line) = lines
            .next()
            .with_context(|| format!("{} is empty", path.display()))?;
        let header: Vec<String> = header_line
            .split(',')
            .map(|h| h.trim().to_string())
            .collect();
        let rows = lines
            .map(|(n, line)| (n, line.split(',').map(|f| f.trim().to_string()).collect()))
            .collect();
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str, path: &Path) -> Result<usize> {
        self.column(name).with_context(|| {
            format!(
                "{}: missing column {name:?} (header: {})",
                path.display(),
                self.header.join(",")
            )
        })
    }
}

fn field<'a>(row: &'a [String], idx: usize, line: usize, name: &str) -> Result<&'a str> {
    row.get(idx)
        .map(|s| s.as_str())
        .with_context(|| format!("line {line}: missing field {name}"))
}

fn parse_f64(raw: &str, line: usize, name: &str) -> Result<f64> {
    if raw.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    raw.parse::<f64>()
        .with_context(|| format!("line {line}: bad {name}: {raw:?}"))
}

/// Read resonator rows `index,length_um,f_ghz[,copy_id][,facing]`.
/// Extra columns (`w_um`, `s_um`) are tolerated; an empty `f_ghz` marks a
/// design-only record.
pub fn read_resonators(path: &Path) -> Result<Vec<ResonatorRecord>> {
    let table = Table::read(path)?;
    let idx_index = table.require("index", path)?;
    let idx_length = table.require("length_um", path)?;
    let idx_f = table.require("f_ghz", path)?;
    let idx_copy = table.column("copy_id");
    let idx_facing = table.column("facing");

    let mut records = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let index: u32 = field(row, idx_index, *line, "index")?
            .parse()
            .with_context(|| format!("line {line}: bad index"))?;
        let length_um = parse_f64(field(row, idx_length, *line, "length_um")?, *line, "length_um")?;
        let f_raw = field(row, idx_f, *line, "f_ghz")?;
        let measured_f_ghz = if f_raw.is_empty() {
            None
        } else {
            Some(parse_f64(f_raw, *line, "f_ghz")?)
        };
        let copy_id = idx_copy
            .and_then(|i| row.get(i))
            .filter(|s| !s.is_empty())
            .cloned();
        let facing = match idx_facing.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
            Some(raw) => Some(
                Facing::from_str(raw).map_err(|e| anyhow::anyhow!("line {line}: {e}"))?,
            ),
            None => None,
        };
        let record = ResonatorRecord {
            index,
            length_um,
            measured_f_ghz,
            facing,
            copy_id,
        };
        record.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{}: no resonator rows", path.display());
    }
    Ok(records)
}

/// Read participation rows `w_um,facing,p_ms,p_mv,p_sv[,p_bulk_substrate][,p_vacuum]`.
pub fn read_participation(path: &Path) -> Result<Vec<ParticipationRecord>> {
    let table = Table::read(path)?;
    let idx_w = table.require("w_um", path)?;
    let idx_facing = table.require("facing", path)?;
    let idx_ms = table.require("p_ms", path)?;
    let idx_mv = table.require("p_mv", path)?;
    let idx_sv = table.require("p_sv", path)?;
    let idx_bulk = table.column("p_bulk_substrate");
    let idx_vac = table.column("p_vacuum");

    let mut records = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let optional = |idx: Option<usize>, name: &str| -> Result<Option<f64>> {
            match idx.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
                Some(raw) => Ok(Some(parse_f64(raw, *line, name)?)),
                None => Ok(None),
            }
        };
        let record = ParticipationRecord {
            w_um: parse_f64(field(row, idx_w, *line, "w_um")?, *line, "w_um")?,
            facing: Facing::from_str(field(row, idx_facing, *line, "facing")?)
                .map_err(|e| anyhow::anyhow!("line {line}: {e}"))?,
            p_ms: parse_f64(field(row, idx_ms, *line, "p_ms")?, *line, "p_ms")?,
            p_mv: parse_f64(field(row, idx_mv, *line, "p_mv")?, *line, "p_mv")?,
            p_sv: parse_f64(field(row, idx_sv, *line, "p_sv")?, *line, "p_sv")?,
            p_bulk_substrate: optional(idx_bulk, "p_bulk_substrate")?,
            p_vacuum: optional(idx_vac, "p_vacuum")?,
        };
        record.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{}: no participation rows", path.display());
    }
    Ok(records)
}

/// Read a complex trace `f_hz,re_s21,im_s21`.
pub fn read_trace(path: &Path) -> Result<ComplexTrace> {
    let table = Table::read(path)?;
    let idx_f = table.require("f_hz", path)?;
    let idx_re = table.require("re_s21", path)?;
    let idx_im = table.require("im_s21", path)?;

    let mut freqs = Vec::with_capacity(table.rows.len());
    let mut s21 = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        freqs.push(parse_f64(field(row, idx_f, *line, "f_hz")?, *line, "f_hz")?);
        let re = parse_f64(field(row, idx_re, *line, "re_s21")?, *line, "re_s21")?;
        let im = parse_f64(field(row, idx_im, *line, "im_s21")?, *line, "im_s21")?;
        s21.push(Complex64::new(re, im));
    }
    ComplexTrace::new(freqs, s21).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Write a trace in the same schema.
pub fn write_trace(path: &Path, freqs_hz: &[f64], s21: &[Complex64]) -> Result<()> {
    let mut out = String::from("f_hz,re_s21,im_s21\n");
    for (f, z) in freqs_hz.iter().zip(s21) {
        out.push_str(&format!("{},{},{}\n", f, z.re, z.im));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("flipchip_io_test_{name}"));
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn resonator_reader_handles_optional_columns() {
        let path = write_tmp(
            "resonators.csv",
            "index,w_um,s_um,length_um,f_ghz,facing\n0,5.00,3.24,6049.8,4.9729,metal\n1,5.00,3.24,5816.1,,metal\n",
        );
        let records = read_resonators(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].facing, Some(Facing::Metal));
        assert_eq!(records[0].measured_f_ghz, Some(4.9729));
        assert_eq!(records[1].measured_f_ghz, None);
        assert_eq!(records[0].copy_id, None);
    }

    #[test]
    fn resonator_reader_requires_core_columns() {
        let path = write_tmp("bad_resonators.csv", "index,foo\n0,1\n");
        assert!(read_resonators(&path).is_err());
    }

    #[test]
    fn participation_reader_round_trip() {
        let path = write_tmp(
            "participation.csv",
            "w_um,facing,p_ms,p_mv,p_sv\n5.0,metal,0.004,0.001,0.005\n20.0,metal,0.001,0.0005,0.0005\n",
        );
        let records = read_participation(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].p_ms, 0.004);
    }

    #[test]
    fn trace_reader_round_trip() {
        let freqs: Vec<f64> = (0..60).map(|i| 5e9 + 1e3 * i as f64).collect();
        let s21: Vec<Complex64> = freqs.iter().map(|&f| Complex64::new(f / 6e9, -0.1)).collect();
        let path = std::env::temp_dir().join("flipchip_io_test_trace.csv");
        write_trace(&path, &freqs, &s21).unwrap();
        let trace = read_trace(&path).unwrap();
        assert_eq!(trace.freqs_hz.len(), 60);
        assert_eq!(trace.s21[3], s21[3]);
    }
}
