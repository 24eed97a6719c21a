//! Time-series ingestion, stationarity transforms and lag-matrix construction.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Quarterly period label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub year: i32,
    pub quarter: u8,
}

impl Period {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::invalid(format!("quarter {quarter} outside 1..=4")));
        }
        Ok(Period { year, quarter })
    }

    pub fn next(self) -> Period {
        if self.quarter == 4 {
            Period { year: self.year + 1, quarter: 1 }
        } else {
            Period { year: self.year, quarter: self.quarter + 1 }
        }
    }

    /// Consecutive periods starting at `self`.
    pub fn sequence(self, n: usize) -> Vec<Period> {
        let mut out = Vec::with_capacity(n);
        let mut p = self;
        for _ in 0..n {
            out.push(p);
            p = p.next();
        }
        out
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Period {
    type Err = Error;

    /// Accepts `YYYYQq` or an ISO date (`YYYY-MM-DD`, `YYYY-MM`), mapping months to quarters.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("unrecognized date `{s}`"));
        if let Some((y, q)) = s.split_once(['Q', 'q']) {
            let year = y.parse::<i32>().map_err(|_| bad())?;
            let quarter = q.parse::<u8>().map_err(|_| bad())?;
            return Period::new(year, quarter);
        }
        let mut parts = s.split(['-', '/']);
        let year = parts.next().ok_or_else(bad)?.parse::<i32>().map_err(|_| bad())?;
        let month = parts.next().ok_or_else(bad)?.parse::<u32>().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Period::new(year, ((month - 1) / 3 + 1) as u8)
    }
}

/// Stationarity transformation applied to a raw quarterly series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformCode {
    /// (1) level.
    Level,
    /// (2) year-on-year growth rate, `100 (x_t / x_{t-4} − 1)`.
    YearOnYear,
    /// (3) quarter-on-quarter growth rate, `100 log(x_t / x_{t-1})`.
    QuarterGrowth,
    /// (4) quarter-on-quarter percentage change, `100 (x_t − x_{t-1}) / x_{t-1}`.
    PercentChange,
}

impl TransformCode {
    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            1 => Ok(TransformCode::Level),
            2 => Ok(TransformCode::YearOnYear),
            3 => Ok(TransformCode::QuarterGrowth),
            4 => Ok(TransformCode::PercentChange),
            other => Err(Error::invalid(format!("unknown transform code {other}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TransformCode::Level => 1,
            TransformCode::YearOnYear => 2,
            TransformCode::QuarterGrowth => 3,
            TransformCode::PercentChange => 4,
        }
    }

    /// Number of leading observations the transform leaves undefined.
    pub fn rows_lost(self) -> usize {
        match self {
            TransformCode::Level => 0,
            TransformCode::YearOnYear => 4,
            TransformCode::QuarterGrowth | TransformCode::PercentChange => 1,
        }
    }

    /// Transform a raw series; leading undefined entries are `NaN`.
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        let lag = self.rows_lost();
        (0..x.len())
            .map(|t| {
                if t < lag {
                    return f64::NAN;
                }
                match self {
                    TransformCode::Level => x[t],
                    TransformCode::YearOnYear => 100.0 * (x[t] / x[t - 4] - 1.0),
                    TransformCode::QuarterGrowth => 100.0 * (x[t] / x[t - 1]).ln(),
                    TransformCode::PercentChange => 100.0 * (x[t] - x[t - 1]) / x[t - 1],
                }
            })
            .collect()
    }
}

/// Ordered mapping from CSV column name to transform code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub entries: Vec<(String, TransformCode)>,
}

impl TransformSpec {
    pub fn new(entries: Vec<(String, TransformCode)>) -> Self {
        TransformSpec { entries }
    }

    /// Parse a spec document: one `NAME CODE` pair per line (comma, `=` or
    /// whitespace separated), `#` starts a comment. Line order is variable order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split([',', '=', ' ', '\t'])
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect();
            if fields.len() != 2 {
                return Err(Error::invalid(format!(
                    "transform spec line {}: expected `NAME CODE`, got `{line}`",
                    lineno + 1
                )));
            }
            let code = fields[1].parse::<i64>().map_err(|_| {
                Error::invalid(format!(
                    "transform spec line {}: code `{}` is not an integer",
                    lineno + 1,
                    fields[1]
                ))
            })?;
            entries.push((fields[0].to_string(), TransformCode::from_code(code)?));
        }
        if entries.is_empty() {
            return Err(Error::invalid("transform spec lists no variables"));
        }
        Ok(TransformSpec { entries })
    }
}

/// Aligned, transformed and demeaned multivariate quarterly panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePanel {
    /// `T × M` observations.
    pub values: DMatrix<f64>,
    pub variable_names: Vec<String>,
    pub dates: Vec<Period>,
    pub transform_codes: Vec<TransformCode>,
}

impl TimePanel {
    pub fn new(
        values: DMatrix<f64>,
        variable_names: Vec<String>,
        dates: Vec<Period>,
        transform_codes: Vec<TransformCode>,
    ) -> Result<Self> {
        let (t, m) = values.shape();
        if t < 2 {
            return Err(Error::invalid(format!("panel needs at least 2 periods, got {t}")));
        }
        if m == 0 {
            return Err(Error::invalid("panel has no variables"));
        }
        if variable_names.len() != m || transform_codes.len() != m || dates.len() != t {
            return Err(Error::invalid("panel metadata does not match value dimensions"));
        }
        let mut seen = HashSet::new();
        for name in &variable_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate variable name `{name}`")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("panel contains non-finite values"));
        }
        Ok(TimePanel {
            values,
            variable_names,
            dates,
            transform_codes,
        })
    }

    /// Untransformed panel starting at `start` with generated names `y1..yM`.
    pub fn from_levels(values: DMatrix<f64>, start: Period) -> Result<Self> {
        let (t, m) = values.shape();
        let names = (1..=m).map(|j| format!("y{j}")).collect();
        TimePanel::new(values, names, start.sequence(t), vec![TransformCode::Level; m])
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().cloned().collect()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().cloned().collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|n| n == name)
    }

    /// Subtract each column's sample mean.
    pub fn demeaned(mut self) -> Self {
        for j in 0..self.n_vars() {
            let mean = stats::mean(&self.column(j));
            for t in 0..self.n_periods() {
                self.values[(t, j)] -= mean;
            }
        }
        self
    }

    /// Demeaned and divided by each series' standard deviation; returns the scales.
    pub fn standardized(self) -> Result<(Self, Vec<f64>)> {
        let mut out = self.demeaned();
        let mut scales = Vec::with_capacity(out.n_vars());
        for j in 0..out.n_vars() {
            let sd = stats::std_dev(&out.column(j));
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::invalid(format!("series `{}` has no variation", out.variable_names[j])));
            }
            for t in 0..out.n_periods() {
                out.values[(t, j)] /= sd;
            }
            scales.push(sd);
        }
        Ok((out, scales))
    }

    /// First `n` periods.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n < 2 || n > self.n_periods() {
            return Err(Error::invalid(format!("cannot truncate panel to {n} periods")));
        }
        TimePanel::new(
            self.values.rows(0, n).into_owned(),
            self.variable_names.clone(),
            self.dates[..n].to_vec(),
            self.transform_codes.clone(),
        )
    }

    /// Permute variables: column `i` of the result is column `permutation[i]` of `self`.
    pub fn reorder_variables(&self, permutation: &[usize]) -> Result<Self> {
        let m = self.n_vars();
        let mut seen = vec![false; m];
        if permutation.len() != m {
            return Err(Error::invalid(format!(
                "permutation has length {}, panel has {m} variables",
                permutation.len()
            )));
        }
        for &k in permutation {
            if k >= m || seen[k] {
                return Err(Error::invalid("permutation is not a bijection"));
            }
            seen[k] = true;
        }
        let mut values = DMatrix::zeros(self.n_periods(), m);
        for (i, &k) in permutation.iter().enumerate() {
            values.set_column(i, &self.values.column(k));
        }
        Ok(TimePanel {
            values,
            variable_names: permutation.iter().map(|&k| self.variable_names[k].clone()).collect(),
            dates: self.dates.clone(),
            transform_codes: permutation.iter().map(|&k| self.transform_codes[k]).collect(),
        })
    }

    /// Write the panel as CSV with a leading `date` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.variable_names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.n_periods() {
            let mut rec = vec![self.dates[t].to_string()];
            rec.extend(self.values.row(t).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a CSV of raw levels, transform each requested column and demean.
///
/// Rows whose first cell is `factors` or `transform` (FRED-QD metadata rows) are skipped.
pub fn load_panel<R: Read>(source: R, spec: &TransformSpec) -> Result<TimePanel> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::invalid("CSV has no header"));
    }
    let columns: Vec<usize> = spec
        .entries
        .iter()
        .map(|(name, _)| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("column `{name}` not found in CSV header")))
        })
        .collect::<Result<_>>()?;

    let mut dates = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let date_cell = record.get(0).unwrap_or("").trim();
        let lowered = date_cell.to_ascii_lowercase();
        if lowered == "factors" || lowered == "transform" || date_cell.is_empty() && record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let date = date_cell.parse::<Period>().map_err(|e| Error::Parse {
            row,
            column: header[0].clone(),
            message: e.to_string(),
        })?;
        dates.push(date);
        for (k, &col) in columns.iter().enumerate() {
            let cell = record.get(col).unwrap_or("").trim();
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: header[col].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            raw[k].push(v);
        }
    }

    let drop = spec.entries.iter().map(|(_, c)| c.rows_lost()).max().unwrap_or(0);
    let t_raw = dates.len();
    if t_raw <= drop + 1 {
        return Err(Error::invalid(format!(
            "{t_raw} rows leave fewer than 2 usable periods after transformation"
        )));
    }
    let t = t_raw - drop;
    let m = columns.len();
    let mut values = DMatrix::zeros(t, m);
    for (k, (name, code)) in spec.entries.iter().enumerate() {
        let transformed = code.apply(&raw[k]);
        for s in 0..t {
            let v = transformed[s + drop];
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: s + drop + 2,
                    column: name.clone(),
                    message: format!("transform {} produced a non-finite value", code.code()),
                });
            }
            values[(s, k)] = v;
        }
        let col: Vec<f64> = values.column(k).iter().cloned().collect();
        if stats::variance(&col) <= 0.0 {
            return Err(Error::invalid(format!("column `{name}` has zero variance after transformation")));
        }
    }
    let panel = TimePanel::new(
        values,
        spec.entries.iter().map(|(n, _)| n.clone()).collect(),
        dates[drop..].to_vec(),
        spec.entries.iter().map(|(_, c)| *c).collect(),
    )?;
    Ok(panel.demeaned())
}

/// Per-equation regressor and response matrices for a lag order `p`.
#[derive(Debug, Clone)]
pub struct LagDesign {
    pub p: usize,
    pub n_vars: usize,
    /// `X_j`: `T_eff × p`, column `i` is variable `j` lagged `i + 1` periods.
    pub own: Vec<DMatrix<f64>>,
    /// `Z_j`: `T_eff × (M − 1) p`, lag-major over the other variables.
    pub other: Vec<DMatrix<f64>>,
    /// `Y_j`.
    pub response: Vec<DVector<f64>>,
    /// `T_eff × (j − 1)` matrix of the preceding equations' responses.
    pub contemporaneous: Vec<DMatrix<f64>>,
    pub scale_own: Vec<DVector<f64>>,
    pub scale_other: Vec<DVector<f64>>,
}

impl LagDesign {
    pub fn t_eff(&self) -> usize {
        self.response[0].len()
    }

    /// `K = M p`, the total number of lagged regressors.
    pub fn n_regressors(&self) -> usize {
        self.n_vars * self.p
    }
}

/// Own- and other-lag regressor vectors of equation `j` given recent history,
/// `lags[i]` being the full `M`-vector observed `i + 1` periods back.
pub fn lag_regressors(lags: &[Vec<f64>], j: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let m = lags[0].len();
    let own = (0..p).map(|i| lags[i][j]).collect();
    let mut other = Vec::with_capacity((m - 1) * p);
    for lag in lags.iter().take(p) {
        for (k, v) in lag.iter().enumerate() {
            if k != j {
                other.push(*v);
            }
        }
    }
    (own, other)
}

fn column_variances(x: &DMatrix<f64>, what: &str, j: usize) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.ncols());
    for c in 0..x.ncols() {
        let col: Vec<f64> = x.column(c).iter().cloned().collect();
        let v = stats::variance(&col);
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "{what} regressor column {c} of equation {} is constant",
                j + 1
            )));
        }
        out[c] = v;
    }
    Ok(out)
}

pub fn build_lag_design(panel: &TimePanel, p: usize) -> Result<LagDesign> {
    let t = panel.n_periods();
    let m = panel.n_vars();
    if p == 0 {
        return Err(Error::invalid("lag order must be at least 1"));
    }
    if p >= t {
        return Err(Error::invalid(format!("lag order {p} must be smaller than T = {t}")));
    }
    let t_eff = t - p;
    let y = &panel.values;
    let mut design = LagDesign {
        p,
        n_vars: m,
        own: Vec::with_capacity(m),
        other: Vec::with_capacity(m),
        response: Vec::with_capacity(m),
        contemporaneous: Vec::with_capacity(m),
        scale_own: Vec::with_capacity(m),
        scale_other: Vec::with_capacity(m),
    };
    for j in 0..m {
        let mut own = DMatrix::zeros(t_eff, p);
        let mut other = DMatrix::zeros(t_eff, (m - 1) * p);
        for r in 0..t_eff {
            let lags: Vec<Vec<f64>> = (0..p).map(|i| panel.row(r + p - 1 - i)).collect();
            let (x, z) = lag_regressors(&lags, j, p);
            for (c, v) in x.iter().enumerate() {
                own[(r, c)] = *v;
            }
            for (c, v) in z.iter().enumerate() {
                other[(r, c)] = *v;
            }
        }
        let response = DVector::from_iterator(t_eff, (0..t_eff).map(|r| y[(r + p, j)]));
        let mut contemp = DMatrix::zeros(t_eff, j);
        for k in 0..j {
            for r in 0..t_eff {
                contemp[(r, k)] = y[(r + p, k)];
            }
        }
        design.scale_own.push(column_variances(&own, "own-lag", j)?);
        design.scale_other.push(column_variances(&other, "other-lag", j)?);
        design.own.push(own);
        design.other.push(other);
        design.response.push(response);
        design.contemporaneous.push(contemp);
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_from_cols(cols: &[&[f64]]) -> TimePanel {
        let t = cols[0].len();
        let m = cols.len();
        let values = DMatrix::from_fn(t, m, |r, c| cols[c][r]);
        TimePanel::from_levels(values, Period::new(2000, 1).unwrap()).unwrap()
    }

    #[test]
    fn period_parsing() {
        assert_eq!("1960Q1".parse::<Period>().unwrap(), Period::new(1960, 1).unwrap());
        assert_eq!("1960-07-01".parse::<Period>().unwrap(), Period::new(1960, 3).unwrap());
        assert_eq!("2019-12".parse::<Period>().unwrap(), Period::new(2019, 4).unwrap());
        assert!("1960Q5".parse::<Period>().is_err());
        assert!("garbage".parse::<Period>().is_err());
        assert_eq!(Period::new(1999, 4).unwrap().next().to_string(), "2000Q1");
    }

    #[test]
    fn level_transform_is_identity() {
        assert_eq!(TransformCode::Level.apply(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn year_on_year_of_constant_growth() {
        let x: Vec<f64> = (0..12).map(|t| 1.02f64.powi(t)).collect();
        let y = TransformCode::YearOnYear.apply(&x);
        assert!(y[..4].iter().all(|v| v.is_nan()));
        let expected = 100.0 * (1.02f64.powi(4) - 1.0);
        assert!((expected - 8.243216).abs() < 1e-6);
        for v in &y[4..] {
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_codes_use_one_period() {
        let x = [100.0, 110.0];
        assert!((TransformCode::PercentChange.apply(&x)[1] - 10.0).abs() < 1e-12);
        assert!((TransformCode::QuarterGrowth.apply(&x)[1] - 100.0 * 1.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_code_rejected() {
        assert!(TransformCode::from_code(7).is_err());
        assert!(TransformSpec::parse("GDPC1 9").is_err());
    }

    #[test]
    fn load_drops_rows_and_demeans() {
        let mut csv = String::from("date,GDPC1,FEDFUNDS,UNUSED\n");
        for t in 0..16 {
            let q = t % 4 + 1;
            let y = 1960 + t / 4;
            csv.push_str(&format!(
                "{y}Q{q},{},{},x\n",
                100.0 * 1.01f64.powi(t as i32) * (1.0 + 0.01 * ((t * 7) % 3) as f64),
                1.0 + 0.1 * t as f64
            ));
        }
        let spec = TransformSpec::parse("GDPC1 2\nFEDFUNDS 1\n").unwrap();
        let panel = load_panel(csv.as_bytes(), &spec).unwrap();
        assert_eq!(panel.n_vars(), 2);
        assert_eq!(panel.n_periods(), 12);
        assert_eq!(panel.dates[0].to_string(), "1961Q1");
        for j in 0..2 {
            assert!(stats::mean(&panel.column(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn load_reports_bad_cell() {
        let csv = "date,a\n2000Q1,1\n2000Q2,oops\n2000Q3,3\n";
        let spec = TransformSpec::parse("a 1").unwrap();
        match load_panel(csv.as_bytes(), &spec) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_constant_column() {
        let csv = "date,a\n2000Q1,1\n2000Q2,1\n2000Q3,1\n";
        let spec = TransformSpec::parse("a 1").unwrap();
        assert!(load_panel(csv.as_bytes(), &spec).is_err());
    }

    #[test]
    fn fred_metadata_rows_skipped() {
        let csv = "sasdate,a\nfactors,1\ntransform,1\n2000-01-01,1\n2000-04-01,2\n2000-07-01,4\n";
        let spec = TransformSpec::parse("a,1").unwrap();
        let panel = load_panel(csv.as_bytes(), &spec).unwrap();
        assert_eq!(panel.n_periods(), 3);
    }

    #[test]
    fn univariate_design() {
        let panel = panel_from_cols(&[&[1.0, 2.0, 3.0]]);
        let d = build_lag_design(&panel, 1).unwrap();
        assert_eq!(d.response[0].as_slice(), &[2.0, 3.0]);
        assert_eq!(d.own[0].as_slice(), &[1.0, 2.0]);
        assert_eq!(d.other[0].ncols(), 0);
        assert_eq!(d.contemporaneous[0].ncols(), 0);
    }

    #[test]
    fn bivariate_design_shapes() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let b = [3.0, 1.0, 6.0, 2.0, 9.0, 4.0];
        let panel = panel_from_cols(&[&a, &b]);
        let d = build_lag_design(&panel, 2).unwrap();
        assert_eq!(d.t_eff(), 4);
        for j in 0..2 {
            assert_eq!(d.own[j].shape(), (4, 2));
            assert_eq!(d.other[j].shape(), (4, 2));
        }
        // own lag i of equation 0 is variable 0 shifted by i + 1
        assert_eq!(d.own[0][(0, 0)], a[1]);
        assert_eq!(d.own[0][(0, 1)], a[0]);
        assert_eq!(d.other[0][(0, 0)], b[1]);
        assert_eq!(d.contemporaneous[1].column(0).as_slice(), &a[2..]);
    }

    #[test]
    fn design_rejections() {
        let panel = panel_from_cols(&[&[1.0, 2.0, 3.0]]);
        assert!(build_lag_design(&panel, 3).is_err());
        assert!(build_lag_design(&panel, 0).is_err());
        let flat = panel_from_cols(&[&[1.0, 1.0, 1.0, 2.0]]);
        assert!(build_lag_design(&flat, 2).is_err());
    }

    #[test]
    fn reorder_rejects_non_bijection() {
        let panel = panel_from_cols(&[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        assert!(panel.reorder_variables(&[0, 0]).is_err());
        assert!(panel.reorder_variables(&[0]).is_err());
        let swapped = panel.reorder_variables(&[1, 0]).unwrap();
        assert_eq!(swapped.variable_names, vec!["y2", "y1"]);
        assert_eq!(swapped.reorder_variables(&[1, 0]).unwrap(), panel);
    }
}
