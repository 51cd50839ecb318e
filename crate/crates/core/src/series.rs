//! Univariate series data model, CSV ingestion, chronological splitting and
//! z-score scaling.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series must contain at least one observation")]
    Empty,
    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: cannot parse {cell:?} as a number")]
    NotNumeric { row: usize, cell: String },
    #[error("row {row}: missing value in column {column}")]
    MissingCell { row: usize, column: String },
    #[error("column {0:?} not found in header")]
    UnknownColumn(String),
    #[error("column {0} is empty")]
    EmptyColumn(String),
    #[error("test length {test_len} must be positive and smaller than series length {len}")]
    BadSplit { test_len: usize, len: usize },
    #[error("unknown frequency label {0:?}")]
    UnknownFrequency(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frequency {
    FiveMin,
    Daily,
    Weekly,
    Monthly,
    #[default]
    Other,
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::FiveMin => "five_min",
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
            Frequency::Other => "other",
        })
    }
}

impl FromStr for Frequency {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "five_min" => Ok(Frequency::FiveMin),
            "daily" => Ok(Frequency::Daily),
            "weekly" => Ok(Frequency::Weekly),
            "monthly" => Ok(Frequency::Monthly),
            "other" => Ok(Frequency::Other),
            _ => Err(SeriesError::UnknownFrequency(s.to_string())),
        }
    }
}

/// An ordered, non-empty sequence of finite observations. Position `i` maps to
/// time `start_index + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_index: i64,
    frequency: Frequency,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, SeriesError> {
        Self::with_metadata(values, 0, Frequency::Other)
    }

    pub fn with_metadata(
        values: Vec<f64>,
        start_index: i64,
        frequency: Frequency,
    ) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SeriesError::NonFinite { index, value });
        }
        Ok(Self {
            values,
            start_index,
            frequency,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    /// Time ordinal of position `i`.
    pub fn time_of(&self, i: usize) -> i64 {
        self.start_index + i as i64
    }

    /// Concatenates `other` after `self`; metadata is taken from `self`.
    pub fn concat(&self, other: &TimeSeries) -> TimeSeries {
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        TimeSeries {
            values,
            start_index: self.start_index,
            frequency: self.frequency,
        }
    }
}

/// Column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnSelector::Index(i) => write!(f, "{i}"),
            ColumnSelector::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub column: ColumnSelector,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            column: ColumnSelector::Index(0),
            has_header: true,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<TimeSeries, SeriesError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SeriesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, opts)
}

/// Reads one column of a CSV stream. Row numbers in errors are 1-based data
/// rows (the header, if any, is not counted).
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<TimeSeries, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let col = match &opts.column {
        ColumnSelector::Index(i) => *i,
        ColumnSelector::Name(name) => {
            if !opts.has_header {
                return Err(SeriesError::UnknownColumn(name.clone()));
            }
            rdr.headers()?
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SeriesError::UnknownColumn(name.clone()))?
        }
    };

    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = record.get(col).filter(|c| !c.is_empty()).ok_or_else(|| {
            SeriesError::MissingCell {
                row,
                column: opts.column.to_string(),
            }
        })?;
        let v: f64 = cell.parse().map_err(|_| SeriesError::NotNumeric {
            row,
            cell: cell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(SeriesError::NotNumeric {
                row,
                cell: cell.to_string(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(SeriesError::EmptyColumn(opts.column.to_string()));
    }
    TimeSeries::new(values)
}

/// Writes a single-column CSV with header `value`, readable by [`load_csv`]
/// with default options.
pub fn write_csv<W: Write>(series: &TimeSeries, writer: W) -> Result<(), SeriesError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value"])?;
    for v in series.values() {
        w.write_record([format!("{v:?}")])?;
    }
    w.flush().map_err(|source| SeriesError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Writes the `index,actual,predicted` prediction file.
pub fn write_predictions<W: Write>(
    writer: W,
    first_index: i64,
    actual: &[f64],
    predicted: &[f64],
) -> Result<(), SeriesError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "actual", "predicted"])?;
    for (i, p) in predicted.iter().enumerate() {
        let a = actual.get(i).map(|a| format!("{a:?}")).unwrap_or_default();
        w.write_record([(first_index + i as i64).to_string(), a, format!("{p:?}")])?;
    }
    w.flush().map_err(|source| SeriesError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Reads a prediction file back as `(index, actual, predicted)` columns.
pub fn read_predictions<R: Read>(reader: R) -> Result<(Vec<i64>, Vec<f64>, Vec<f64>), SeriesError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let (mut idx, mut act, mut pred) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |c: usize| -> Result<&str, SeriesError> {
            record.get(c).ok_or(SeriesError::MissingCell {
                row,
                column: c.to_string(),
            })
        };
        let parse = |s: &str| -> Result<f64, SeriesError> {
            s.parse().map_err(|_| SeriesError::NotNumeric {
                row,
                cell: s.to_string(),
            })
        };
        idx.push(field(0)?.parse().map_err(|_| SeriesError::NotNumeric {
            row,
            cell: record.get(0).unwrap_or_default().to_string(),
        })?);
        act.push(parse(field(1)?)?);
        pred.push(parse(field(2)?)?);
    }
    Ok((idx, act, pred))
}

/// Number of trailing observations held out for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub test_len: usize,
}

/// Chronological holdout: the first `N - h` values train, the last `h` test.
pub fn split(series: &TimeSeries, spec: SplitSpec) -> Result<(TimeSeries, TimeSeries), SeriesError> {
    let n = series.len();
    if spec.test_len == 0 || spec.test_len >= n {
        return Err(SeriesError::BadSplit {
            test_len: spec.test_len,
            len: n,
        });
    }
    let cut = n - spec.test_len;
    let train = TimeSeries {
        values: series.values[..cut].to_vec(),
        start_index: series.start_index,
        frequency: series.frequency,
    };
    let test = TimeSeries {
        values: series.values[cut..].to_vec(),
        start_index: series.start_index + cut as i64,
        frequency: series.frequency,
    };
    Ok((train, test))
}

/// `x -> (x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineScaler {
    shift: f64,
    scale: f64,
}

impl AffineScaler {
    pub fn identity() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }

    /// Mean and population standard deviation of `values`. A spread that is
    /// zero, or fewer than two values, gives `scale = 1`.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::identity();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if values.len() >= 2 && std > f64::EPSILON * mean.abs().max(1.0) {
            std
        } else {
            1.0
        };
        Self { shift: mean, scale }
    }

    pub fn fit_series(train: &TimeSeries) -> Self {
        Self::fit(train.values())
    }

    /// Restores a scaler from stored parameters; a non-positive or
    /// non-finite scale is replaced by 1.
    pub fn from_parts(shift: f64, scale: f64) -> Self {
        let scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            1.0
        };
        Self { shift, scale }
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply_one(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert_one(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }

    pub fn apply(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply_one(x)).collect()
    }

    pub fn invert(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.invert_one(z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opts(header: bool) -> CsvOptions {
        CsvOptions {
            column: ColumnSelector::Index(0),
            has_header: header,
        }
    }

    #[test]
    fn reads_simple_column() {
        let s = read_csv("1.0\n2.0\n3.0\n".as_bytes(), &opts(false)).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn reports_bad_row() {
        let data = "v\n1\n2\n3\n4\nabc\n6\n";
        let err = read_csv(data.as_bytes(), &opts(true)).unwrap_err();
        match err {
            SeriesError::NotNumeric { row, .. } => assert_eq!(row, 5),
            e => panic!("unexpected {e}"),
        }
        assert!(err_string(data).contains("row 5"));
    }

    fn err_string(data: &str) -> String {
        read_csv(data.as_bytes(), &opts(true)).unwrap_err().to_string()
    }

    #[test]
    fn named_column_and_errors() {
        let data = "date,traffic\n2020-01-01,5\n2020-01-02,6.5\n";
        let o = CsvOptions {
            column: ColumnSelector::Name("traffic".into()),
            has_header: true,
        };
        assert_eq!(read_csv(data.as_bytes(), &o).unwrap().values(), &[5.0, 6.5]);
        let o = CsvOptions {
            column: ColumnSelector::Name("nope".into()),
            has_header: true,
        };
        assert!(matches!(
            read_csv(data.as_bytes(), &o),
            Err(SeriesError::UnknownColumn(_))
        ));
        assert!(matches!(
            read_csv("v\n".as_bytes(), &opts(true)),
            Err(SeriesError::EmptyColumn(_))
        ));
        assert!(matches!(
            read_csv("v\n1\n\n".as_bytes(), &opts(true)).map(|s| s.len()),
            Ok(1)
        ));
        assert!(matches!(
            read_csv("a,b\n1,2\n3,\n".as_bytes(), &CsvOptions { column: ColumnSelector::Index(1), has_header: true }),
            Err(SeriesError::MissingCell { row: 2, .. })
        ));
        assert!(matches!(
            load_csv("/definitely/not/here.csv", &opts(true)),
            Err(SeriesError::Io { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(TimeSeries::new(vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::new(vec![]).is_err());
        assert!(read_csv("v\ninf\n".as_bytes(), &opts(true)).is_err());
    }

    #[test]
    fn split_examples() {
        let s = TimeSeries::new(vec![1., 2., 3., 4., 5.]).unwrap();
        let (tr, te) = split(&s, SplitSpec { test_len: 2 }).unwrap();
        assert_eq!(tr.values(), &[1., 2., 3.]);
        assert_eq!(te.values(), &[4., 5.]);
        assert_eq!(te.start_index(), 3);
        assert!(split(&s, SplitSpec { test_len: 0 }).is_err());
        assert!(split(&s, SplitSpec { test_len: 5 }).is_err());

        let long = TimeSeries::new((0..254).map(f64::from).collect()).unwrap();
        let (tr, _) = split(&long, SplitSpec { test_len: 30 }).unwrap();
        assert_eq!(tr.len(), 224);
    }

    #[test]
    fn scaler_examples() {
        let c = AffineScaler::fit(&[2., 2., 2.]);
        assert_eq!((c.shift(), c.scale()), (2.0, 1.0));
        assert_eq!(c.apply(&[2.0]), vec![0.0]);

        let s = AffineScaler::fit(&[0., 2.]);
        assert_eq!((s.shift(), s.scale()), (1.0, 1.0));
        assert_eq!(s.apply(&[3.0]), vec![2.0]);

        let s = AffineScaler::fit(&[1.0, 4.0, 9.5]);
        let x = [-5.0, 0.0, 7.25];
        for (b, x) in s.invert(&s.apply(&x)).iter().zip(x) {
            assert!((b - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn csv_write_read_identity() {
        let s = TimeSeries::new(vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn predictions_roundtrip() {
        let mut buf = Vec::new();
        write_predictions(&mut buf, 7, &[1.0, 2.0], &[1.5, 2.25]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,actual,predicted\n7,1.0,1.5\n"));
        let (i, a, p) = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(i, vec![7, 8]);
        assert_eq!(a, vec![1.0, 2.0]);
        assert_eq!(p, vec![1.5, 2.25]);
    }

    proptest! {
        #[test]
        fn split_concat_restores(values in prop::collection::vec(-1e6f64..1e6, 2..200), frac in 0.0f64..1.0) {
            let s = TimeSeries::new(values).unwrap();
            let h = 1 + ((s.len() - 1) as f64 * frac) as usize;
            let h = h.min(s.len() - 1);
            let (tr, te) = split(&s, SplitSpec { test_len: h }).unwrap();
            prop_assert_eq!(tr.concat(&te), s);
        }

        #[test]
        fn scaler_roundtrip(train in prop::collection::vec(-1e3f64..1e3, 1..50),
                            xs in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let sc = AffineScaler::fit(&train);
            let back = sc.invert(&sc.apply(&xs));
            for (b, x) in back.iter().zip(&xs) {
                prop_assert!((b - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn csv_roundtrip(values in prop::collection::vec(-1e9f64..1e9, 1..100)) {
            let s = TimeSeries::new(values).unwrap();
            let mut buf = Vec::new();
            write_csv(&s, &mut buf).unwrap();
            let once = read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
            let mut buf2 = Vec::new();
            write_csv(&once, &mut buf2).unwrap();
            prop_assert_eq!(&once, &s);
            prop_assert_eq!(buf, buf2);
        }
    }
}
