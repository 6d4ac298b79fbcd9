//! Plain-text matrix format and CSV exports.
//!
//! Matrix files: a `rows cols` header line, then one `re im` pair per entry in
//! row-major order. Numbers are written with 17 significant digits so files
//! are byte-identical across identical runs.

use crate::lindblad::{PulseSequence, Series};
use crate::{ComplexMatrix, Error, Real, Result};
use nalgebra::DMatrix;
use num_complex::Complex;
use std::fmt::Write as _;
use std::path::Path;

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_matrix<T: Real>(m: &ComplexMatrix<T>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            let _ = writeln!(s, "{} {}", fmt_num(z.re.as_f64()), fmt_num(z.im.as_f64()));
        }
    }
    s
}

pub fn read_matrix<T: Real>(text: &str) -> Result<ComplexMatrix<T>> {
    let mut tokens = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
    };
    let rows = next_usize("row count")?;
    let cols = next_usize("column count")?;
    let values: Vec<f64> = text
        .split_whitespace()
        .skip(2)
        .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad entry {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != 2 * rows * cols {
        return Err(Error::Parse(format!(
            "expected {} numbers for a {rows}x{cols} matrix, found {}",
            2 * rows * cols,
            values.len()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        Complex::new(T::lit(values[k]), T::lit(values[k + 1]))
    }))
}

pub fn save_matrix<T: Real>(path: &Path, m: &ComplexMatrix<T>) -> Result<()> {
    std::fs::write(path, write_matrix(m))?;
    Ok(())
}

pub fn load_matrix<T: Real>(path: &Path) -> Result<ComplexMatrix<T>> {
    read_matrix(&std::fs::read_to_string(path)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// `time,re(ch0),im(ch0),...` with one row per pulse slot (slot start time).
pub fn write_pulse_csv<T: Real>(pulse: &PulseSequence<T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    for name in pulse.names() {
        header.push(format!("re({name})"));
        header.push(format!("im({name})"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..pulse.steps() {
        let mut row = vec![fmt_num(pulse.dt().as_f64() * k as f64)];
        for c in 0..pulse.n_channels() {
            let z = pulse.amplitude(c, k);
            row.push(fmt_num(z.re.as_f64()));
            row.push(fmt_num(z.im.as_f64()));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_pulse_csv<T: Real>(text: &str) -> Result<PulseSequence<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 1 || &header[0] != "time" || header.len() % 2 != 1 {
        return Err(Error::Parse("pulse header must be time,re(ch),im(ch),...".into()));
    }
    let mut names = Vec::new();
    for c in 0..(header.len() - 1) / 2 {
        let re = &header[1 + 2 * c];
        let name = re
            .strip_prefix("re(")
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("bad column {re:?}")))?;
        if header[2 + 2 * c] != *format!("im({name})") {
            return Err(Error::Parse(format!("column after {re:?} must be im({name})")));
        }
        names.push(name.to_string());
    }
    let mut times = Vec::new();
    let mut amps = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|e| Error::Parse(format!("bad number {:?}: {e}", &rec[i])))
        };
        times.push(num(0)?);
        for (c, a) in amps.iter_mut().enumerate() {
            a.push(Complex::new(T::lit(num(1 + 2 * c)?), T::lit(num(2 + 2 * c)?)));
        }
    }
    if times.len() < 2 {
        return Err(Error::Parse("pulse needs at least two samples".into()));
    }
    let dt = times[1] - times[0];
    PulseSequence::new(T::lit(dt), names, amps)
}

/// `time` column followed by one column per series.
pub fn write_trajectory_csv<T: Real>(times: &[T], series: &[Series<T>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![fmt_num(t.as_f64())];
        row.extend(series.iter().map(|s| fmt_num(s.values[k].as_f64())));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads numeric CSV columns by header name. Lines starting with `#` are
/// skipped.
pub fn read_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse("empty csv".into()));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        for (c, col) in cols.iter_mut().enumerate() {
            let v = rec
                .get(c)
                .ok_or_else(|| Error::Parse("short csv row".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad number in column {}: {e}", header[c])))?;
            col.push(v);
        }
    }
    Ok((header, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_fn(2, 3, |i, j| Complex::new(i as f64 * 0.1 + 1.0 / 3.0, -(j as f64) * 1e-9));
        let text = write_matrix(&m);
        assert!(text.starts_with("2 3\n"));
        let back: ComplexMatrix<f64> = read_matrix(&text).unwrap();
        assert_eq!(back, m);
        assert!(read_matrix::<f64>("2 2\n1 0\n").is_err());
    }

    #[test]
    fn pulse_round_trip() {
        let p = PulseSequence::new(
            5e-8,
            vec!["mode3".into()],
            vec![vec![Complex::new(1.0, -2.0), Complex::new(0.5, 0.25), Complex::new(0.0, 3.0)]],
        )
        .unwrap();
        let text = write_pulse_csv(&p).unwrap();
        assert!(text.starts_with("time,re(mode3),im(mode3)\n"));
        let back: PulseSequence<f64> = read_pulse_csv(&text).unwrap();
        assert_eq!(back.channel(0), p.channel(0));
        assert!((back.dt() - 5e-8).abs() < 1e-20);
    }
}
