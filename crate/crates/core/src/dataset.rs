//! Gridded monthly observations: CSV loading and export, grid bookkeeping, and the
//! feature engineering used before boosting (neighbour averages, zero cross-filling,
//! cross-response imputation).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::booster::BoostedModel;
use crate::error::{Error, Result};
use crate::losses::{dgpd_mean, LossKind};
use crate::matrix::Matrix;
use crate::special::softmax;

/// Name of the covariate holding observed or imputed counts.
pub const CNT_COVARIATE: &str = "cnt_cov";
/// Names of the covariates holding observed or imputed size-class indicators.
pub const BA_CLASS_COVARIATES: [&str; 3] = ["p_zero", "p_med", "p_large"];
/// Location and season columns that precede the covariates in feature matrices.
pub const BASE_FEATURES: [&str; 3] = ["lon", "lat", "month"];
/// Default burned-area threshold between the medium and large size classes (acres).
pub const DEFAULT_SIZE_THRESHOLD: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Cnt,
    Ba,
}

impl Response {
    pub fn name(self) -> &'static str {
        match self {
            Response::Cnt => "CNT",
            Response::Ba => "BA",
        }
    }
}

impl std::str::FromStr for Response {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnt" => Ok(Response::Cnt),
            "ba" => Ok(Response::Ba),
            other => Err(Error::InvalidParameter(format!("unknown response '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    /// Integer grid column and row.
    pub ix: i64,
    pub iy: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub cell: usize,
    pub year: i32,
    pub month: u32,
    pub covariates: Vec<f64>,
    pub cnt: Option<u64>,
    pub ba: Option<f64>,
}

impl Observation {
    pub fn response(&self, r: Response) -> Option<f64> {
        match r {
            Response::Cnt => self.cnt.map(|c| c as f64),
            Response::Ba => self.ba,
        }
    }

    pub fn key(&self) -> ObsKey {
        ObsKey { cell: self.cell, year: self.year, month: self.month }
    }
}

/// Identifies one (cell, year, month) entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObsKey {
    pub cell: usize,
    pub year: i32,
    pub month: u32,
}

/// One input row before cells are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub lon: f64,
    pub lat: f64,
    pub year: i32,
    pub month: u32,
    pub covariates: Vec<f64>,
    pub cnt: Option<u64>,
    pub ba: Option<f64>,
}

/// Column mapping and validation settings for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub lon: String,
    pub lat: String,
    pub year: String,
    pub month: String,
    pub cnt: String,
    pub ba: String,
    pub missing_marker: String,
    pub season: Vec<u32>,
    pub grid_spacing: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            lon: "lon".into(),
            lat: "lat".into(),
            year: "year".into(),
            month: "month".into(),
            cnt: "cnt".into(),
            ba: "ba".into(),
            missing_marker: "NA".into(),
            season: (3..=9).collect(),
            grid_spacing: 0.5,
        }
    }
}

/// Validation settings shared by CSV loading and programmatic construction.
#[derive(Debug, Clone)]
struct GridRules<'a> {
    season: &'a [u32],
    spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    cells: Vec<GridCell>,
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
    spacing: f64,
    neighbors: Vec<Vec<usize>>,
}

const GRID_TOL: f64 = 1e-6;

impl GridDataset {
    /// Build a dataset from records, resolving cells on a regular grid of the given spacing.
    pub fn from_records(records: Vec<Record>, covariate_names: Vec<String>, spacing: f64, season: &[u32]) -> Result<Self> {
        let rules = GridRules { season, spacing };
        let lines: Vec<Option<u64>> = vec![None; records.len()];
        Self::build(records, lines, covariate_names, &rules)
    }

    fn build(records: Vec<Record>, lines: Vec<Option<u64>>, covariate_names: Vec<String>, rules: &GridRules) -> Result<Self> {
        if !(rules.spacing > 0.0) {
            return Err(Error::InvalidParameter("grid spacing must be positive".into()));
        }
        let fail = |i: usize, message: String| match lines[i] {
            Some(line) => Error::MalformedRow { line, message },
            None => Error::InvalidData(format!("record {i}: {message}")),
        };
        let origin = records.first().map(|r| (r.lon, r.lat)).unwrap_or((0.0, 0.0));
        let mut cell_index: BTreeMap<(i64, i64), (f64, f64)> = BTreeMap::new();
        let mut grid_pos = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(fail(i, format!("expected {} covariates, found {}", covariate_names.len(), r.covariates.len())));
            }
            if !rules.season.contains(&r.month) {
                return Err(fail(i, format!("month {} outside the configured season {:?}", r.month, rules.season)));
            }
            if let (Some(c), Some(b)) = (r.cnt, r.ba) {
                if c == 0 && b != 0.0 {
                    return Err(fail(i, format!("zero count with nonzero burned area {b}")));
                }
            }
            if let Some(b) = r.ba {
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(fail(i, format!("burned area must be nonnegative, got {b}")));
                }
            }
            let fx = (r.lon - origin.0) / rules.spacing;
            let fy = (r.lat - origin.1) / rules.spacing;
            if (fx - fx.round()).abs() > GRID_TOL || (fy - fy.round()).abs() > GRID_TOL || !fx.is_finite() || !fy.is_finite() {
                return Err(fail(i, format!("coordinates ({}, {}) are not on the {}-degree grid", r.lon, r.lat, rules.spacing)));
            }
            let key = (fy.round() as i64, fx.round() as i64);
            cell_index.entry(key).or_insert((r.lon, r.lat));
            grid_pos.push(key);
        }
        let cells: Vec<GridCell> = cell_index
            .iter()
            .enumerate()
            .map(|(id, (&(iy, ix), &(lon, lat)))| GridCell { id, lon, lat, ix, iy })
            .collect();
        let id_of: HashMap<(i64, i64), usize> = cells.iter().map(|c| ((c.iy, c.ix), c.id)).collect();
        let mut seen = HashSet::new();
        let mut rows = Vec::with_capacity(records.len());
        for (i, (r, pos)) in records.into_iter().zip(grid_pos).enumerate() {
            let cell = id_of[&pos];
            if !seen.insert((cell, r.year, r.month)) {
                return Err(fail(i, format!("duplicate entry for cell ({}, {}) in {}-{:02}", r.lon, r.lat, r.year, r.month)));
            }
            rows.push(Observation { cell, year: r.year, month: r.month, covariates: r.covariates, cnt: r.cnt, ba: r.ba });
        }
        let neighbors = cells
            .iter()
            .map(|c| {
                let mut v = Vec::new();
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if (dx, dy) != (0, 0) {
                            if let Some(&n) = id_of.get(&(c.iy + dy, c.ix + dx)) {
                                v.push(n);
                            }
                        }
                    }
                }
                v
            })
            .collect();
        Ok(Self { cells, rows, covariate_names, spacing: rules.spacing, neighbors })
    }

    pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, schema)
    }

    pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidData(format!("missing column '{name}'")))
        };
        let idx = [
            find(&schema.lon)?,
            find(&schema.lat)?,
            find(&schema.year)?,
            find(&schema.month)?,
            find(&schema.cnt)?,
            find(&schema.ba)?,
        ];
        let cov_idx: Vec<usize> = (0..headers.len()).filter(|i| !idx.contains(i)).collect();
        let covariate_names: Vec<String> = cov_idx.iter().map(|&i| headers[i].to_string()).collect();
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::MalformedRow { line, message };
            if rec.len() != headers.len() {
                return Err(bad(format!("expected {} fields, found {}", headers.len(), rec.len())));
            }
            let field = |i: usize| rec[i].trim();
            let missing = |i: usize| field(i) == schema.missing_marker;
            let num = |i: usize| -> Result<f64> {
                field(i).parse::<f64>().map_err(|_| bad(format!("column '{}': cannot parse '{}'", &headers[i], field(i))))
            };
            let int = |i: usize| -> Result<i64> {
                field(i).parse::<i64>().map_err(|_| bad(format!("column '{}': expected an integer, got '{}'", &headers[i], field(i))))
            };
            let lon = num(idx[0])?;
            let lat = num(idx[1])?;
            let year = int(idx[2])? as i32;
            let month = int(idx[3])?;
            if !(1..=12).contains(&month) {
                return Err(bad(format!("month {month} is not in 1..=12")));
            }
            let cnt = if missing(idx[4]) {
                None
            } else {
                let v = num(idx[4])?;
                if !(v >= 0.0 && v.fract() == 0.0) {
                    return Err(bad(format!("count must be a nonnegative integer, got {v}")));
                }
                Some(v as u64)
            };
            let ba = if missing(idx[5]) { None } else { Some(num(idx[5])?) };
            let covariates = cov_idx
                .iter()
                .map(|&i| if missing(i) { Ok(f64::NAN) } else { num(i) })
                .collect::<Result<Vec<_>>>()?;
            records.push(Record { lon, lat, year, month: month as u32, covariates, cnt, ba });
            lines.push(Some(line));
        }
        let rules = GridRules { season: &schema.season, spacing: schema.grid_spacing };
        Self::build(records, lines, covariate_names, &rules)
    }

    /// Write the dataset in the input dialect: `lon,lat,year,month,cnt,ba,<covariates>`.
    pub fn write_csv<W: Write>(&self, writer: W, missing_marker: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["lon", "lat", "year", "month", "cnt", "ba"].iter().map(|s| s.to_string()).collect();
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let c = &self.cells[r.cell];
            let mut rec = vec![c.lon.to_string(), c.lat.to_string(), r.year.to_string(), r.month.to_string()];
            rec.push(r.cnt.map_or_else(|| missing_marker.to_string(), |v| v.to_string()));
            rec.push(r.ba.map_or_else(|| missing_marker.to_string(), |v| v.to_string()));
            rec.extend(r.covariates.iter().map(|v| if v.is_nan() { missing_marker.to_string() } else { v.to_string() }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, missing_marker: &str) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, missing_marker)
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Queen (8-cell) neighbours of a cell that are present in the dataset.
    pub fn neighbors(&self, cell: usize) -> &[usize] {
        &self.neighbors[cell]
    }

    /// Cell at the given coordinates, if it lies on this dataset's grid.
    pub fn cell_at(&self, lon: f64, lat: f64) -> Option<usize> {
        let c0 = self.cells.first()?;
        let fx = (lon - c0.lon) / self.spacing + c0.ix as f64;
        let fy = (lat - c0.lat) / self.spacing + c0.iy as f64;
        if (fx - fx.round()).abs() > GRID_TOL || (fy - fy.round()).abs() > GRID_TOL {
            return None;
        }
        let (ix, iy) = (fx.round() as i64, fy.round() as i64);
        self.cells
            .binary_search_by(|c| (c.iy, c.ix).cmp(&(iy, ix)))
            .ok()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown covariate '{name}'")))
    }

    /// `lon`, `lat`, `month`, then every covariate.
    pub fn feature_names(&self) -> Vec<String> {
        BASE_FEATURES.iter().map(|s| s.to_string()).chain(self.covariate_names.iter().cloned()).collect()
    }

    fn feature_value(&self, row: &Observation, name: &str) -> Option<f64> {
        let cell = &self.cells[row.cell];
        match name {
            "lon" => Some(cell.lon),
            "lat" => Some(cell.lat),
            "month" => Some(row.month as f64),
            _ => None,
        }
    }

    /// Feature matrix with the columns named in `names`, in that order.
    pub fn matrix_for(&self, names: &[String]) -> Result<Matrix> {
        let cov: Vec<Option<usize>> = names
            .iter()
            .map(|n| {
                if BASE_FEATURES.contains(&n.as_str()) {
                    Ok(None)
                } else {
                    self.covariate_index(n)
                        .map(Some)
                        .map_err(|_| Error::FeatureMismatch(format!("dataset has no feature '{n}'")))
                }
            })
            .collect::<Result<_>>()?;
        let mut m = Matrix::zeros(self.rows.len(), names.len());
        for (i, r) in self.rows.iter().enumerate() {
            for (j, (name, c)) in names.iter().zip(&cov).enumerate() {
                let v = match c {
                    Some(c) => r.covariates[*c],
                    None => self.feature_value(r, name).unwrap_or(f64::NAN),
                };
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn feature_matrix(&self) -> Matrix {
        self.matrix_for(&self.feature_names()).expect("own feature names resolve")
    }

    /// Dataset restricted to the given rows (in that order).
    pub fn select_rows(&self, idx: &[usize]) -> GridDataset {
        GridDataset { rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), ..self.clone() }
    }

    /// Copy with `response` masked at every key in `keys`.
    pub fn mask(&self, response: Response, keys: &HashSet<ObsKey>) -> GridDataset {
        let mut out = self.clone();
        for r in &mut out.rows {
            if keys.contains(&r.key()) {
                match response {
                    Response::Cnt => r.cnt = None,
                    Response::Ba => r.ba = None,
                }
            }
        }
        out
    }

    /// Copy with a new covariate column appended.
    pub fn with_covariate(&self, name: &str, values: Vec<f64>) -> Result<GridDataset> {
        if self.covariate_names.iter().any(|n| n == name) || BASE_FEATURES.contains(&name) {
            return Err(Error::InvalidParameter(format!("covariate '{name}' already exists")));
        }
        if values.len() != self.rows.len() {
            return Err(Error::InvalidData(format!("{} values for {} rows", values.len(), self.rows.len())));
        }
        let mut out = self.clone();
        out.covariate_names.push(name.to_string());
        for (r, v) in out.rows.iter_mut().zip(values) {
            r.covariates.push(v);
        }
        Ok(out)
    }

    /// Append `<name>_nbr`: the mean of the covariate over the queen neighbours observed
    /// in the same year and month, excluding the cell itself. Cells without any such
    /// neighbour value keep their own value.
    pub fn neighbor_average(&self, name: &str) -> Result<GridDataset> {
        let j = self.covariate_index(name)?;
        let index: HashMap<ObsKey, usize> = self.rows.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
        let values = self
            .rows
            .iter()
            .map(|r| {
                let (sum, n) = self.neighbors[r.cell]
                    .iter()
                    .filter_map(|&c| index.get(&ObsKey { cell: c, year: r.year, month: r.month }))
                    .map(|&i| self.rows[i].covariates[j])
                    .filter(|v| !v.is_nan())
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n > 0 {
                    sum / n as f64
                } else {
                    r.covariates[j]
                }
            })
            .collect();
        self.with_covariate(&format!("{name}_nbr"), values)
    }

    /// Fill masked counts where the burned area is observed as zero, and masked burned
    /// areas where the count is observed as zero. No other entry changes.
    pub fn cross_fill_zeros(&self) -> GridDataset {
        let mut out = self.clone();
        for r in &mut out.rows {
            match (r.cnt, r.ba) {
                (None, Some(0.0)) => r.cnt = Some(0),
                (Some(0), None) => r.ba = Some(0.0),
                _ => {}
            }
        }
        out
    }

    /// Append [`CNT_COVARIATE`]: observed counts, or the dGPD mean predicted by `aux`
    /// where the count is masked.
    pub fn impute_cnt_covariate(&self, aux: &BoostedModel) -> Result<GridDataset> {
        if aux.loss.kind != LossKind::Dgpd {
            return Err(Error::InvalidParameter("count imputation needs a dGPD model".into()));
        }
        let alpha = aux.loss.alpha()?;
        if !(alpha > 1.0) {
            return Err(Error::MeanUndefined(alpha));
        }
        if let Some(f) = aux.feature_names.iter().find(|f| BA_CLASS_COVARIATES.contains(&f.as_str())) {
            return Err(Error::InvalidParameter(format!("count model uses burned-area covariate '{f}'")));
        }
        let theta = aux.predict_raw_scalar(&self.matrix_for(&aux.feature_names)?)?;
        let values = self
            .rows
            .iter()
            .zip(theta)
            .map(|(r, t)| match r.cnt {
                Some(c) => Ok(c as f64),
                None => dgpd_mean(t, alpha, 1e-10),
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_covariate(CNT_COVARIATE, values)
    }

    /// Append [`BA_CLASS_COVARIATES`]: observed one-hot size classes (zero, `(0, u]`,
    /// above `u`), or the class probabilities of `aux` where the burned area is masked.
    pub fn impute_ba_class_covariates(&self, aux: &BoostedModel, u: f64) -> Result<GridDataset> {
        if aux.loss.kind != LossKind::CrossEntropy || aux.n_outputs() != 3 {
            return Err(Error::InvalidParameter("size-class imputation needs a 3-class cross-entropy model".into()));
        }
        if aux.feature_names.iter().any(|f| f == CNT_COVARIATE) {
            return Err(Error::InvalidParameter(format!("size-class model uses count covariate '{CNT_COVARIATE}'")));
        }
        let scores = aux.predict_raw(&self.matrix_for(&aux.feature_names)?)?;
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for (r, s) in self.rows.iter().zip(scores) {
            let p = match r.ba {
                Some(b) => {
                    let mut onehot = vec![0.0; 3];
                    onehot[size_class(b, u)] = 1.0;
                    onehot
                }
                None => softmax(&s),
            };
            for (c, v) in cols.iter_mut().zip(p) {
                c.push(v);
            }
        }
        let [zero, med, large] = cols;
        self.with_covariate(BA_CLASS_COVARIATES[0], zero)?
            .with_covariate(BA_CLASS_COVARIATES[1], med)?
            .with_covariate(BA_CLASS_COVARIATES[2], large)
    }
}

/// Size class of a burned area: 0 for no fire, 1 for `(0, u]`, 2 above `u`.
pub fn size_class(ba: f64, u: f64) -> usize {
    if ba <= 0.0 {
        0
    } else if ba <= u {
        1
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::booster::{TrainParams, MODEL_FORMAT_VERSION};
    use crate::losses::LossSpec;
    use crate::tree::Tree;
    use approx::assert_relative_eq;

    fn parse(text: &str) -> Result<GridDataset> {
        GridDataset::read_csv(text.as_bytes(), &CsvSchema::default())
    }

    fn rec(lon: f64, lat: f64, v: f64) -> Record {
        Record { lon, lat, year: 2000, month: 5, covariates: vec![v], cnt: Some(1), ba: Some(3.0) }
    }

    fn grid(recs: Vec<Record>) -> GridDataset {
        GridDataset::from_records(recs, vec!["c".into()], 0.5, &[3, 4, 5, 6, 7, 8, 9]).unwrap()
    }

    #[test]
    fn load_csv_maps_fields_and_missing_markers() {
        let ds = parse("lon,lat,year,month,cnt,ba,clim1\n-100.25,37.75,1993,3,0,0,1.5\n-99.75,37.75,1993,3,2,NA,NA\n").unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.rows()[0].cnt, Some(0));
        assert_eq!(ds.rows()[0].ba, Some(0.0));
        assert_eq!(ds.rows()[1].ba, None);
        assert!(ds.rows()[1].covariates[0].is_nan());
        assert_eq!(ds.covariate_names(), &["clim1".to_string()]);
        assert_eq!(ds.neighbors(0), &[1]);
        assert_eq!(ds.cell_at(-99.75, 37.75), Some(1));
        assert_eq!(ds.cell_at(-99.7, 37.75), None);
        assert_eq!(ds.cell_at(-99.25, 37.75), None);
    }

    #[test]
    fn load_csv_errors_name_the_line() {
        let off_season = parse("lon,lat,year,month,cnt,ba\n-100.25,37.75,1993,3,0,0\n-100.25,37.75,1993,11,0,0\n");
        match off_season {
            Err(Error::MalformedRow { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("month 11"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let dup = parse("lon,lat,year,month,cnt,ba\n-100.25,37.75,1993,3,0,0\n-100.25,37.75,1993,3,1,5\n");
        assert!(matches!(dup, Err(Error::MalformedRow { line: 3, .. })));
        let off_grid = parse("lon,lat,year,month,cnt,ba\n-100.25,37.75,1993,3,0,0\n-100.1,37.75,1993,3,0,0\n");
        assert!(matches!(off_grid, Err(Error::MalformedRow { line: 3, .. })));
        let garbage = parse("lon,lat,year,month,cnt,ba\n-100.25,abc,1993,3,0,0\n");
        assert!(matches!(garbage, Err(Error::MalformedRow { line: 2, .. })));
        let inconsistent = parse("lon,lat,year,month,cnt,ba\n-100.25,37.75,1993,3,0,12\n");
        assert!(matches!(inconsistent, Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn csv_roundtrip_preserves_masks() {
        let text = "lon,lat,year,month,cnt,ba,a,b\n-100.25,37.75,1993,3,NA,0,1.5,NA\n-99.75,37.75,1994,4,3,12.25,-2,0.1\n";
        let ds = parse(text).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out, "NA").unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn neighbor_average_examples() {
        // interior cell with 8 neighbours all valued 2
        let mut recs = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let v = if (i, j) == (1, 1) { 9.0 } else { 2.0 };
                recs.push(rec(0.5 * i as f64, 0.5 * j as f64, v));
            }
        }
        let ds = grid(recs).neighbor_average("c").unwrap();
        let centre = ds.rows().iter().position(|r| r.covariates[0] == 9.0).unwrap();
        assert_eq!(ds.rows()[centre].covariates[1], 2.0);
        assert_eq!(ds.covariate_names()[1], "c_nbr");

        // corner cell with three neighbours valued 1, 2, 3
        let ds = grid(vec![rec(0.0, 0.0, 100.0), rec(0.5, 0.0, 1.0), rec(0.0, 0.5, 2.0), rec(0.5, 0.5, 3.0)])
            .neighbor_average("c")
            .unwrap();
        assert_relative_eq!(ds.rows()[0].covariates[1], 2.0);

        // isolated cell falls back to its own value
        let ds = grid(vec![rec(0.0, 0.0, 5.0), rec(3.0, 3.0, 1.0)]).neighbor_average("c").unwrap();
        assert_eq!(ds.rows()[0].covariates[1], 5.0);
        assert!(grid(vec![rec(0.0, 0.0, 5.0)]).neighbor_average("nope").is_err());
    }

    #[test]
    fn neighbor_average_ignores_other_months() {
        let mut other = rec(0.5, 0.0, 50.0);
        other.month = 6;
        let ds = grid(vec![rec(0.0, 0.0, 1.0), rec(0.5, 0.0, 3.0), other]).neighbor_average("c").unwrap();
        assert_eq!(ds.rows()[0].covariates[1], 3.0);
        // month-6 row has no month-6 neighbour
        assert_eq!(ds.rows()[2].covariates[1], 50.0);
    }

    #[test]
    fn cross_fill_examples() {
        let base = |cnt, ba| Record { cnt, ba, ..rec(0.0, 0.0, 0.0) };
        let mk = |cnt, ba| grid(vec![base(cnt, ba)]).cross_fill_zeros().rows()[0].clone();
        assert_eq!(mk(None, Some(0.0)).cnt, Some(0));
        assert_eq!(mk(None, Some(150.0)).cnt, None);
        assert_eq!(mk(Some(0), None).ba, Some(0.0));
        assert_eq!(mk(Some(4), None).ba, None);
        let both = mk(None, None);
        assert_eq!((both.cnt, both.ba), (None, None));
    }

    fn constant_model(loss: LossSpec, base: Vec<f64>) -> BoostedModel {
        BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            loss,
            base_score: base,
            feature_names: vec!["lon".into(), "c".into()],
            trees: vec![],
            params: TrainParams::default(),
        }
    }

    #[test]
    fn impute_cnt_examples() {
        let mut recs = vec![rec(0.0, 0.0, 1.0), rec(0.5, 0.0, 1.0)];
        recs[0].cnt = Some(7);
        recs[1].cnt = None;
        let ds = grid(recs);
        let out = ds.impute_cnt_covariate(&constant_model(LossSpec::dgpd(2.0), vec![0.0])).unwrap();
        let j = out.covariate_index(CNT_COVARIATE).unwrap();
        assert_eq!(out.rows()[0].covariates[j], 7.0);
        assert_relative_eq!(out.rows()[1].covariates[j], std::f64::consts::PI.powi(2) / 6.0 - 1.0, epsilon = 1e-9);
        let err = ds.impute_cnt_covariate(&constant_model(LossSpec::dgpd(1.0), vec![0.0])).unwrap_err();
        assert!(err.to_string().contains("mean does not exist"));
        let mut leaky = constant_model(LossSpec::dgpd(2.0), vec![0.0]);
        leaky.feature_names.push("p_zero".into());
        assert!(ds.impute_cnt_covariate(&leaky).is_err());
    }

    #[test]
    fn impute_ba_class_examples() {
        let mut recs = vec![rec(0.0, 0.0, 1.0), rec(0.5, 0.0, 1.0), rec(1.0, 0.0, 1.0)];
        recs[0].ba = Some(0.0);
        recs[0].cnt = Some(0);
        recs[1].ba = Some(350.0);
        recs[2].ba = None;
        let ds = grid(recs);
        let aux = constant_model(LossSpec::cross_entropy(3), vec![0.0, 0.0, 0.0]);
        let out = ds.impute_ba_class_covariates(&aux, DEFAULT_SIZE_THRESHOLD).unwrap();
        let cols = |i: usize| out.rows()[i].covariates[1..4].to_vec();
        assert_eq!(cols(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(cols(1), vec![0.0, 0.0, 1.0]);
        for v in cols(2) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let two = constant_model(LossSpec::cross_entropy(2), vec![0.0, 0.0]);
        assert!(ds.impute_ba_class_covariates(&two, 200.0).is_err());
    }

    #[test]
    fn imputation_with_trees_keeps_observed_values() {
        let mut recs: Vec<Record> = (0..6).map(|i| rec(0.5 * i as f64, 0.0, i as f64)).collect();
        for (i, r) in recs.iter_mut().enumerate() {
            r.cnt = if i % 2 == 0 { Some(i as u64 + 1) } else { None };
        }
        let ds = grid(recs);
        let aux = BoostedModel { trees: vec![Tree::stump(1, 2.5, -1.0, 1.0)], ..constant_model(LossSpec::dgpd(3.0), vec![0.0]) };
        let out = ds.impute_cnt_covariate(&aux).unwrap();
        let j = out.covariate_index(CNT_COVARIATE).unwrap();
        for (i, r) in out.rows().iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(r.covariates[j], i as f64 + 1.0);
            } else {
                let theta = if (i as f64) <= 2.5 { -1.0 } else { 1.0 };
                assert_relative_eq!(r.covariates[j], dgpd_mean(theta, 3.0, 1e-10).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn size_classes() {
        assert_eq!(size_class(0.0, 200.0), 0);
        assert_eq!(size_class(0.1, 200.0), 1);
        assert_eq!(size_class(200.0, 200.0), 1);
        assert_eq!(size_class(350.0, 200.0), 2);
    }
}
