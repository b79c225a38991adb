//! Observed sample paths and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Observations `Y_Δ, …, Y_{nΔ}` stored row-wise (`n × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T: Real> {
    observations: DMatrix<T>,
    delta: T,
}

impl<T: Real> SamplePath<T> {
    pub fn new(observations: DMatrix<T>, delta: T) -> Result<Self> {
        if observations.ncols() == 0 {
            return Err(Error::InvalidInput("sample path needs at least one output coordinate".into()));
        }
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("sampling distance must be positive, got {delta}")));
        }
        if let Some(pos) = observations.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite observation at row {}",
                pos % observations.nrows().max(1) + 1
            )));
        }
        Ok(Self { observations, delta })
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output dimension.
    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Row `k` (0-based) is `Y_{(k+1)Δ}`.
    pub fn observations(&self) -> &DMatrix<T> {
        &self.observations
    }

    pub fn into_observations(self) -> DMatrix<T> {
        self.observations
    }

    /// First `n` observations.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::Range(format!("cannot truncate {} observations to {n}", self.len())));
        }
        Ok(Self { observations: self.observations.rows(0, n).into_owned(), delta: self.delta })
    }

    pub fn cast<U: Real>(&self) -> SamplePath<U> {
        SamplePath { observations: self.observations.map(|x| U::lit(x.as_f64())), delta: U::lit(self.delta.as_f64()) }
    }

    /// Writes `k,y1,...,ym` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("y{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = vec![(k + 1).to_string()];
            row.extend((0..self.dim()).map(|i| format!("{:.16e}", self.observations[(k, i)].as_f64())));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses the format written by [`SamplePath::write_csv`].
    pub fn read_csv<R: Read>(reader: R, delta: T) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < 2 || &header[0] != "k" {
            return Err(Error::Parse("expected header `k,y1,...,ym`".into()));
        }
        let m = header.len() - 1;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for (idx, rec) in r.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(csv_err)?;
            if rec.len() != m + 1 {
                return Err(Error::Parse(format!("row {line}: expected {} columns, found {}", m + 1, rec.len())));
            }
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {line}: cannot parse `{field}` as a number")))?;
                data.push(T::lit(v));
            }
            rows += 1;
        }
        Self::new(DMatrix::from_row_slice(rows, m, &data), delta)
    }

    pub fn load_csv(path: impl AsRef<Path>, delta: T) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), delta)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        _ => Error::Parse(e.to_string()),
    }
}
