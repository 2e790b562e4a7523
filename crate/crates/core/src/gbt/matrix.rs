use super::{GbtError, Result};

/// Marker stored in a [`FeatureMatrix`] cell for an absent feature.
pub const MISSING: f64 = f64::NAN;

/// Dense row-major feature storage. Absent values are stored as NaN;
/// present values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_features: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_features: usize) -> Self {
        Self { n_features, values: Vec::new() }
    }

    pub fn with_capacity(n_features: usize, rows: usize) -> Self {
        Self { n_features, values: Vec::with_capacity(n_features * rows) }
    }

    /// Appends a row given as `Option`s, `None` meaning missing.
    pub fn push_row(&mut self, row: &[Option<f64>]) -> Result<()> {
        self.check_len(row.len())?;
        for v in row {
            match v {
                Some(x) if !x.is_finite() => return Err(GbtError::NonFinite(format!("feature value {x}"))),
                Some(x) => self.values.push(*x),
                None => self.values.push(MISSING),
            }
        }
        Ok(())
    }

    /// Appends a row in raw encoding (NaN = missing, infinities rejected).
    pub fn push_raw_row(&mut self, row: &[f64]) -> Result<()> {
        self.check_len(row.len())?;
        if let Some(x) = row.iter().find(|x| x.is_infinite()) {
            return Err(GbtError::NonFinite(format!("feature value {x}")));
        }
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn from_rows(n_features: usize, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let mut m = Self::with_capacity(n_features, rows.len());
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got == self.n_features {
            Ok(())
        } else {
            Err(GbtError::FeatureLength { expected: self.n_features, got })
        }
    }

    pub fn n_rows(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.values.len() / self.n_features
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Raw row slice, NaN = missing.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn get(&self, row: usize, feature: usize) -> Option<f64> {
        let v = self.values[row * self.n_features + feature];
        (!v.is_nan()).then_some(v)
    }

    #[inline]
    pub(crate) fn raw(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features + feature]
    }
}

/// Bit set on a column entry whose value differs from the entry before it.
pub(crate) const NEW_VALUE: u32 = 1 << 31;
pub(crate) const ROW_MASK: u32 = NEW_VALUE - 1;

/// Present values of every feature, sorted ascending (ties by row).
///
/// Built once per data set and shared across all boosting rounds. Each
/// entry is a row id with [`NEW_VALUE`] marking the start of a run of equal
/// values, which is all split search needs; thresholds are read back from
/// the matrix.
#[derive(Debug, Clone)]
pub struct ColumnIndex {
    pub(crate) columns: Vec<Vec<u32>>,
}

impl ColumnIndex {
    pub fn build(matrix: &FeatureMatrix) -> Self {
        assert!(matrix.n_rows() <= ROW_MASK as usize, "row count exceeds the index range");
        let columns = (0..matrix.n_features())
            .map(|f| {
                let mut entries: Vec<(f64, u32)> = (0..matrix.n_rows())
                    .filter_map(|r| matrix.get(r, f).map(|v| (v, r as u32)))
                    .collect();
                entries.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut prev = None;
                entries
                    .into_iter()
                    .map(|(v, r)| {
                        // -0.0 and 0.0 compare equal and must share a run.
                        let new = prev.is_none_or(|p: f64| p < v);
                        prev = Some(v);
                        if new {
                            r | NEW_VALUE
                        } else {
                            r
                        }
                    })
                    .collect()
            })
            .collect();
        Self { columns }
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// Number of present entries across all features.
    pub fn n_present(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}
