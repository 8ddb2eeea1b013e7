//! Price and sector ingestion, daily returns and row windows.
//!
//! Price files are `date,<ticker>,...` CSV tables of adjusted closes with
//! ISO-8601 dates in strictly increasing order. Cells must be present,
//! numeric and strictly positive; nothing is imputed. Dates are carried as
//! opaque labels and every window is a row count.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Trading days per year; also the default estimation window.
pub const TRADING_DAYS_PER_YEAR: usize = 252;
/// Trading days per quarter; the default holding window.
pub const TRADING_DAYS_PER_QUARTER: usize = 63;

/// Dates × tickers table of adjusted closing prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMatrix {
    dates: Vec<String>,
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

/// T × N table of simple daily returns.
///
/// Row `t` holds the return realized on `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    dates: Vec<String>,
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

fn check_labels(dates: &[String], tickers: &[String], rows: usize, cols: usize) -> Result<()> {
    if dates.len() != rows || tickers.len() != cols {
        return Err(Error::invalid(format!(
            "shape mismatch: {} dates x {} tickers for a {rows}x{cols} table",
            dates.len(),
            tickers.len()
        )));
    }
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "dates not increasing: {} followed by {}",
            w[0], w[1]
        )));
    }
    let mut seen = HashSet::new();
    for t in tickers {
        if !seen.insert(t.as_str()) {
            return Err(Error::invalid(format!("duplicate ticker {t}")));
        }
    }
    Ok(())
}

impl PriceMatrix {
    pub fn new(dates: Vec<String>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        check_labels(&dates, &tickers, values.nrows(), values.ncols())?;
        if let Some(((r, c), v)) = values
            .iter()
            .enumerate()
            .map(|(idx, v)| ((idx % values.nrows(), idx / values.nrows()), v))
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::invalid(format!(
                "price {v} at date {} ticker {} is not a positive number",
                dates[r], tickers[c]
            )));
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_dates(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }
}

impl ReturnMatrix {
    pub fn new(dates: Vec<String>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        check_labels(&dates, &tickers, values.nrows(), values.ncols())?;
        if values.iter().any(|v| !(v.is_finite() && *v > -1.0)) {
            return Err(Error::invalid("returns must be finite and greater than -1"));
        }
        Ok(Self {
            dates,
            tickers,
            values,
        })
    }

    /// Synthetic returns labelled `d0000..` and `s000..`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let dates = (0..values.nrows()).map(|t| format!("d{t:05}")).collect();
        let tickers = (0..values.ncols()).map(|i| format!("s{i:03}")).collect();
        Self::new(dates, tickers, values)
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_days(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    /// Contiguous rows `[start, start + length)`.
    pub fn slice_window(&self, start: usize, length: usize) -> Result<Self> {
        let end = start
            .checked_add(length)
            .filter(|&end| end <= self.n_days())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "window [{start}, {start}+{length}) outside {} rows",
                    self.n_days()
                ))
            })?;
        Ok(Self {
            dates: self.dates[start..end].to_vec(),
            tickers: self.tickers.clone(),
            values: self.values.rows(start, length).into_owned(),
        })
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_assets()) {
            return Err(Error::invalid(format!(
                "column {bad} outside {} assets",
                self.n_assets()
            )));
        }
        let tickers = indices.iter().map(|&i| self.tickers[i].clone()).collect();
        Self::new(
            self.dates.clone(),
            tickers,
            self.values.select_columns(indices),
        )
    }

    /// Index of the first row whose date is `>= date`.
    pub fn first_row_on_or_after(&self, date: &str) -> usize {
        self.dates.partition_point(|d| d.as_str() < date)
    }
}

/// Simple returns `p[t+1]/p[t] - 1`, dated by the later price.
pub fn compute_returns(prices: &PriceMatrix) -> Result<ReturnMatrix> {
    let n_rows = prices.n_dates();
    if n_rows < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 price rows to form returns, got {n_rows}"
        )));
    }
    let p = &prices.values;
    let values = DMatrix::from_fn(n_rows - 1, p.ncols(), |t, i| {
        p[(t + 1, i)] / p[(t, i)] - 1.0
    });
    ReturnMatrix::new(prices.dates[1..].to_vec(), prices.tickers.clone(), values)
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub fn load_prices(path: impl AsRef<Path>) -> Result<PriceMatrix> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("date") {
        return Err(format_err("header must start with `date`".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if tickers.is_empty() {
        return Err(format_err("no ticker columns".into()));
    }
    let mut seen = HashSet::new();
    for t in &tickers {
        if t.is_empty() {
            return Err(format_err("empty ticker name in header".into()));
        }
        if !seen.insert(t.as_str()) {
            return Err(format_err(format!("duplicate ticker {t} in header")));
        }
    }

    let mut dates: Vec<String> = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // 1-based line numbers, header is line 1.
        let row = idx + 2;
        let cell_err = |column: &str, message: String| Error::Cell {
            path: path.to_path_buf(),
            row,
            column: column.to_owned(),
            message,
        };
        if record.len() != tickers.len() + 1 {
            return Err(format_err(format!(
                "row {row}: expected {} fields, found {}",
                tickers.len() + 1,
                record.len()
            )));
        }
        let date = &record[0];
        if !is_iso_date(date) {
            return Err(cell_err(
                "date",
                format!("`{date}` is not a YYYY-MM-DD date"),
            ));
        }
        if let Some(prev) = dates.last() {
            if prev.as_str() >= date {
                return Err(cell_err(
                    "date",
                    format!("dates not increasing: {prev} followed by {date}"),
                ));
            }
        }
        dates.push(date.to_owned());
        for (cell, ticker) in record.iter().skip(1).zip(&tickers) {
            if cell.is_empty() {
                return Err(cell_err(ticker, "missing value".into()));
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| cell_err(ticker, format!("`{cell}` is not a number")))?;
            if !(value.is_finite() && value > 0.0) {
                return Err(cell_err(ticker, format!("price {cell} must be positive")));
            }
            flat.push(value);
        }
    }
    if dates.is_empty() {
        return Err(format_err("no data rows".into()));
    }
    let values = DMatrix::from_row_slice(dates.len(), tickers.len(), &flat);
    PriceMatrix::new(dates, tickers, values)
}

pub fn write_prices(prices: &PriceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["date".to_owned()];
    header.extend(prices.tickers.iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for (t, date) in prices.dates.iter().enumerate() {
        let mut row = vec![date.clone()];
        row.extend(prices.values.row(t).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Ticker → sector labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorMap {
    entries: BTreeMap<String, String>,
}

impl SectorMap {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut entries = BTreeMap::new();
        for (ticker, sector) in pairs {
            let (ticker, sector) = (ticker.into(), sector.into());
            if sector.is_empty() {
                return Err(Error::invalid(format!("empty sector for {ticker}")));
            }
            if entries.insert(ticker.clone(), sector).is_some() {
                return Err(Error::invalid(format!("duplicate ticker {ticker}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, ticker: &str) -> Option<&str> {
        self.entries.get(ticker).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of tickers per sector.
    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for sector in self.entries.values() {
            *out.entry(sector.as_str()).or_default() += 1;
        }
        out
    }
}

pub fn load_sector_map(path: impl AsRef<Path>) -> Result<SectorMap> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let header = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if header.len() != 2 || &header[0] != "ticker" || &header[1] != "sector" {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "header must be `ticker,sector`".into(),
        });
    }
    let mut pairs = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let row = idx + 2;
        let ticker = record.get(0).unwrap_or_default();
        let sector = record.get(1).unwrap_or_default();
        if ticker.is_empty() || sector.is_empty() {
            return Err(Error::Cell {
                path: path.to_path_buf(),
                row,
                column: if ticker.is_empty() {
                    "ticker"
                } else {
                    "sector"
                }
                .into(),
                message: "empty value".into(),
            });
        }
        pairs.push((ticker.to_owned(), sector.to_owned()));
    }
    SectorMap::from_pairs(pairs).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn prices(cols: &[&[f64]]) -> PriceMatrix {
        let rows = cols[0].len();
        let dates = (0..rows).map(|t| format!("2020-01-{:02}", t + 1)).collect();
        let tickers = (0..cols.len()).map(|i| format!("T{i}")).collect();
        let values = DMatrix::from_fn(rows, cols.len(), |t, i| cols[i][t]);
        PriceMatrix::new(dates, tickers, values).unwrap()
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_tmp("date,AAA,BBB\n2020-01-01,10,20\n2020-01-02,11,21\n2020-01-03,12,22.5\n");
        let p = load_prices(f.path()).unwrap();
        assert_eq!(p.n_dates(), 3);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.tickers(), ["AAA", "BBB"]);
        assert_eq!(p.values()[(2, 1)], 22.5);
    }

    #[test]
    fn blank_cell_is_named() {
        let f = write_tmp("date,AAA,BBB\n2020-01-01,10,20\n2020-01-02,,21\n");
        let err = load_prices(f.path()).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "AAA");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_unordered_dates() {
        let f = write_tmp("date,AAA\n2020-01-02,10\n2020-01-01,11\n");
        let err = load_prices(f.path()).unwrap_err().to_string();
        assert!(err.contains("dates not increasing"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ticker_and_bad_prices() {
        let f = write_tmp("date,AAA,AAA\n2020-01-01,10,11\n");
        assert!(load_prices(f.path())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let f = write_tmp("date,AAA\n2020-01-01,0\n");
        assert!(load_prices(f.path()).is_err());
        let f = write_tmp("date,AAA\n2020-01-01,-3\n");
        assert!(load_prices(f.path()).is_err());
        let f = write_tmp("date,AAA\n2020-01-01,abc\n");
        assert!(load_prices(f.path())
            .unwrap_err()
            .to_string()
            .contains("not a number"));
        let f = write_tmp("date,AAA\n01/02/2020,1\n");
        assert!(load_prices(f.path()).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let p = prices(&[&[100.0, 101.25, 99.0 / 7.0], &[1e-3, 2.5, 3.0]]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_prices(&p, f.path()).unwrap();
        assert_eq!(load_prices(f.path()).unwrap(), p);
    }

    #[test]
    fn returns_arithmetic() {
        let r = compute_returns(&prices(&[&[100.0, 100.0, 100.0]])).unwrap();
        assert_eq!(r.values().as_slice(), &[0.0, 0.0]);
        let r = compute_returns(&prices(&[&[100.0, 110.0]])).unwrap();
        assert!((r.values()[(0, 0)] - 0.10).abs() < 1e-15);
        let r = compute_returns(&prices(&[&[100.0, 50.0, 100.0]])).unwrap();
        assert_eq!(r.values().as_slice(), &[-0.5, 1.0]);
        assert_eq!(r.dates(), ["2020-01-02", "2020-01-03"]);
        assert!(compute_returns(&prices(&[&[100.0]])).is_err());
    }

    #[test]
    fn window_bounds() {
        let r =
            ReturnMatrix::from_values(DMatrix::from_fn(10, 2, |t, i| (t * 2 + i) as f64 * 1e-3))
                .unwrap();
        assert_eq!(r.slice_window(0, 10).unwrap(), r);
        assert!(r.slice_window(10, 1).is_err());
        assert!(r.slice_window(usize::MAX, 2).is_err());
        let w = r.slice_window(5, 3).unwrap();
        assert_eq!(w.n_days(), 3);
        assert_eq!(w.dates(), &r.dates()[5..8]);
        assert_eq!(w.values()[(0, 1)], r.values()[(5, 1)]);
        assert_eq!(w.values()[(2, 0)], r.values()[(7, 0)]);
    }

    #[test]
    fn sector_map_loading() {
        let f = write_tmp("ticker,sector\nA,Energy\nB,Energy\nC,Utilities\n");
        let m = load_sector_map(f.path()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.counts().len(), 2);
        let f = write_tmp("ticker,sector\nA,Energy\nA,Utilities\n");
        assert!(load_sector_map(f.path())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let f = write_tmp("ticker,sector\nA,\n");
        assert!(load_sector_map(f.path()).is_err());
    }

    #[test]
    fn sp500_universe_sector_counts() {
        let table = [
            ("Communication", 18),
            ("Consumer discretionary", 73),
            ("Consumer staples", 37),
            ("Energy", 32),
            ("Financials", 92),
            ("Health care", 68),
            ("Industrials", 93),
            ("Information Technology", 67),
            ("Materials", 30),
            ("Real estate", 49),
            ("Utilities", 31),
        ];
        let mut pairs = Vec::new();
        for (sector, n) in table {
            for j in 0..n {
                pairs.push((format!("{sector}-{j}"), sector.to_owned()));
            }
        }
        let m = SectorMap::from_pairs(pairs).unwrap();
        assert_eq!(m.len(), 590);
        assert_eq!(m.counts()["Financials"], 92);
        assert_eq!(m.counts()["Industrials"], 93);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn compounding_recovers_prices(
                path in proptest::collection::vec(0.5f64..2.0, 2..60),
                p0 in 1.0f64..500.0,
            ) {
                let mut col = vec![p0];
                for g in &path {
                    let last = *col.last().unwrap();
                    col.push(last * g);
                }
                let r = compute_returns(&prices(&[&col])).unwrap();
                let rebuilt = r.values().iter().fold(p0, |acc, x| acc * (1.0 + x));
                let last = *col.last().unwrap();
                prop_assert!(((rebuilt - last) / last).abs() <= 1e-12);
            }

            #[test]
            fn slicing_commutes_with_column_selection(
                start in 0usize..20, len in 1usize..10, cols in proptest::collection::btree_set(0usize..4, 1..4),
            ) {
                let r = ReturnMatrix::from_values(DMatrix::from_fn(30, 4, |t, i| ((t * 7 + i * 3) % 11) as f64 * 1e-3)).unwrap();
                let cols: Vec<usize> = cols.into_iter().collect();
                let a = r.slice_window(start, len).unwrap().select_columns(&cols).unwrap();
                let b = r.select_columns(&cols).unwrap().slice_window(start, len).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
