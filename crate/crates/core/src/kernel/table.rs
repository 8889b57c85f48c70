use std::io::Read;

use super::KernelError;

/// Convolution kernel k(gap) tabulated on increasing gaps, interpolated
/// linearly in (ln gap, ln value) so power laws are reproduced exactly.
/// Outside the table the end segments are extended.
#[derive(Clone, Debug, PartialEq)]
pub struct GapTable {
    log_gap: Vec<f64>,
    log_val: Vec<f64>,
}

impl GapTable {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, KernelError> {
        if points.len() < 2 {
            return Err(KernelError::Table("need at least two (gap, value) rows".into()));
        }
        let mut log_gap = Vec::with_capacity(points.len());
        let mut log_val = Vec::with_capacity(points.len());
        for (i, &(g, v)) in points.iter().enumerate() {
            if !(g > 0.0 && g.is_finite() && v > 0.0 && v.is_finite()) {
                return Err(KernelError::Table(format!("row {i}: gap and value must be positive and finite")));
            }
            if i > 0 && g <= points[i - 1].0 {
                return Err(KernelError::Table(format!("row {i}: gaps must be strictly increasing")));
            }
            log_gap.push(g.ln());
            log_val.push(v.ln());
        }
        Ok(Self { log_gap, log_val })
    }

    /// Reads a two-column CSV `gap,value`; a non-numeric first row is treated as a header.
    pub fn from_csv(reader: impl Read) -> Result<Self, KernelError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| KernelError::Table(e.to_string()))?;
            if rec.len() != 2 {
                return Err(KernelError::Table(format!("row {i}: expected 2 columns, found {}", rec.len())));
            }
            let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match parsed {
                (Ok(g), Ok(v)) => points.push((g, v)),
                _ if i == 0 => continue,
                _ => return Err(KernelError::Table(format!("row {i}: non-numeric entry"))),
            }
        }
        Self::new(&points)
    }

    pub fn len(&self) -> usize {
        self.log_gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_gap.is_empty()
    }

    pub fn eval(&self, gap: f64) -> f64 {
        let x = gap.ln();
        let n = self.log_gap.len();
        let j = match self.log_gap.partition_point(|&g| g <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.log_gap[j], self.log_gap[j + 1]);
        let (y0, y1) = (self.log_val[j], self.log_val[j + 1]);
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp()
    }
}
