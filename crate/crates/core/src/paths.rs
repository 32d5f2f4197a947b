//! Rectangular path matrices and their CSV form.
//!
//! A [`PathSet`] stores `n_paths` rows of `n_cols` observations; column `c`
//! holds time index `first_time + c`. Simulated Heston paths start at `t0`,
//! model samples and encoded training data start at `t1`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PathSet<T> {
    n_paths: usize,
    n_cols: usize,
    first_time: usize,
    data: Vec<T>,
}

/// Real-valued price paths.
pub type PricePaths = PathSet<f64>;

/// Integer-encoded paths with symbols in `[0, 2^m)`.
pub type SymbolPaths = PathSet<u32>;

impl<T: Copy> PathSet<T> {
    pub fn new(n_paths: usize, n_cols: usize, first_time: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_paths * n_cols {
            return Err(Error::Shape(format!(
                "{} values for {n_paths} paths of {n_cols} columns",
                data.len()
            )));
        }
        Ok(Self { n_paths, n_cols, first_time, data })
    }

    pub fn from_rows(rows: &[Vec<T>], first_time: usize) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::Shape(format!("row {i} has {} columns, expected {n_cols}", rows[i].len())));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), n_cols, first_time, data)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn first_time(&self) -> usize {
        self.first_time
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        // chunks_exact of an empty column count would panic
        let width = self.n_cols.max(1);
        self.data.chunks_exact(width).take(if self.n_cols == 0 { 0 } else { self.n_paths })
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = T> + '_ {
        self.rows().map(move |r| r[c])
    }

    /// Drop the first `k` columns.
    pub fn drop_leading(&self, k: usize) -> Self {
        let k = k.min(self.n_cols);
        let n_cols = self.n_cols - k;
        let data = self.rows().flat_map(|r| r[k..].iter().copied()).collect();
        Self { n_paths: self.n_paths, n_cols, first_time: self.first_time + k, data }
    }

    /// Columns observed on `t1..tM`, dropping a leading `t0` column if present.
    pub fn observed(&self) -> Self {
        if self.first_time == 0 {
            self.drop_leading(1)
        } else {
            self.clone()
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n_paths: idx.len(), n_cols: self.n_cols, first_time: self.first_time, data }
    }

    pub fn header(&self) -> Vec<String> {
        (0..self.n_cols).map(|c| format!("t{}", self.first_time + c)).collect()
    }
}

impl PricePaths {
    /// Header `t{a},…,t{b}` then one path per line. `{}` formatting of `f64`
    /// is the shortest representation that parses back to the same bits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header().join(","))?;
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (c, x) in row.iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{x}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file)
    }

    pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let times: Vec<usize> = header
            .iter()
            .map(|h| {
                h.trim()
                    .strip_prefix('t')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("bad CSV header column `{h}`")))
            })
            .collect::<Result<_>>()?;
        if times.is_empty() {
            return Err(Error::InvalidInput("CSV header has no columns".into()));
        }
        if times.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidInput("CSV time columns must be consecutive".into()));
        }
        let n_cols = times.len();
        let mut data = Vec::new();
        let mut n_paths = 0;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != n_cols {
                return Err(Error::Shape(format!("CSV row {line} has {} fields", rec.len())));
            }
            for field in rec.iter() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("CSV row {line}: `{field}` is not a number")))?;
                data.push(x);
            }
            n_paths += 1;
        }
        Self::new(n_paths, n_cols, times[0], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_drops_t0_only() {
        let p = PricePaths::from_rows(&[vec![100.0, 101.0, 99.0]], 0).unwrap();
        let o = p.observed();
        assert_eq!(o.first_time(), 1);
        assert_eq!(o.row(0), &[101.0, 99.0]);
        assert_eq!(o.observed(), o);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = PricePaths::from_rows(
            &[vec![100.0, 0.1 + 0.2, 1e-300], vec![100.0, 99.999_999_999_999_99, -0.0]],
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t0,t1,t2\n"));
        let back = PricePaths::read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back.header(), p.header());
        for (a, b) in back.data().iter().zip(p.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_only_csv_is_empty() {
        let back = PricePaths::read_csv_from("t1,t2,t3\n".as_bytes()).unwrap();
        assert_eq!(back.n_paths(), 0);
        assert_eq!(back.n_cols(), 3);
        assert_eq!(back.first_time(), 1);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(PricePaths::from_rows(&[vec![1.0], vec![1.0, 2.0]], 0).is_err());
        assert!(PricePaths::read_csv_from("t1,t2\n1,2\n3\n".as_bytes()).is_err());
        assert!(PricePaths::read_csv_from("x,y\n1,2\n".as_bytes()).is_err());
    }
}
