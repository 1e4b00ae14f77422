//! Spatially correlated validation folds, drawn by forward simulation of a latent
//! Gaussian masking model shared between the two responses.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{GridCell, GridDataset, ObsKey, Response};
use crate::error::{Error, Result};
use crate::special::{bessel_k, expit, gamma, normal_pdf};

pub const DEFAULT_N_FOLDS: usize = 5;
const JITTER: f64 = 1e-8;

/// Matérn covariance at distance `d` with empirical range `r`.
pub fn matern_cov(d: f64, r: f64, sigma_gp: f64, nu: f64) -> f64 {
    let var = sigma_gp * sigma_gp;
    if d <= 0.0 {
        return var;
    }
    let kappa = (8.0 * nu).sqrt() / r;
    let t = kappa * d;
    if t > 700.0 {
        return 0.0;
    }
    var * 2f64.powf(1.0 - nu) * t.powf(nu) * bessel_k(nu, t) / gamma(nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskModelParams {
    pub beta0_cnt: f64,
    pub beta0_ba: f64,
    /// Loading of the shared field in the BA linear predictor.
    pub beta: f64,
    /// Empirical range in degrees.
    pub range: f64,
    pub sigma_gp: f64,
    pub nu: f64,
    /// Variance of the month-level noise.
    pub phi: f64,
}

impl Default for MaskModelParams {
    fn default() -> Self {
        Self { beta0_cnt: 0.0, beta0_ba: 0.0, beta: 0.42, range: 2.0, sigma_gp: 1.0, nu: 1.0, phi: 0.1 }
    }
}

impl MaskModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.range > 0.0) {
            return bad(format!("range must be positive, got {}", self.range));
        }
        if !(self.sigma_gp >= 0.0) {
            return bad(format!("sigma_gp must be nonnegative, got {}", self.sigma_gp));
        }
        if !(self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.phi >= 0.0) {
            return bad(format!("phi must be nonnegative, got {}", self.phi));
        }
        if !self.beta0_cnt.is_finite() || !self.beta0_ba.is_finite() || !self.beta.is_finite() {
            return bad("intercepts and beta must be finite".into());
        }
        Ok(())
    }

    /// Standard deviation of the CNT and BA linear predictors around their intercepts.
    pub fn predictor_sd(&self) -> (f64, f64) {
        let s2 = self.sigma_gp * self.sigma_gp;
        ((s2 + self.phi).sqrt(), (self.beta * self.beta * s2 + self.phi).sqrt())
    }

    /// Marginal masking probabilities `E[expit(μ)]` for CNT and BA.
    pub fn marginal_rates(&self) -> (f64, f64) {
        let (sc, sb) = self.predictor_sd();
        (expected_expit(self.beta0_cnt, sc), expected_expit(self.beta0_ba, sb))
    }

    /// Copy with intercepts chosen so the marginal rates match the fraction of entries
    /// already masked in `ds` for each response.
    pub fn calibrated(&self, ds: &GridDataset) -> Result<MaskModelParams> {
        let (sc, sb) = self.predictor_sd();
        let rate = |r: Response| {
            let n = ds.n_rows() as f64;
            ds.rows().iter().filter(|o| o.response(r).is_none()).count() as f64 / n
        };
        Ok(MaskModelParams {
            beta0_cnt: calibrate_intercept(rate(Response::Cnt), sc)?,
            beta0_ba: calibrate_intercept(rate(Response::Ba), sb)?,
            ..self.clone()
        })
    }
}

/// `E[expit(b + τZ)]` for standard normal `Z`, by trapezoid quadrature.
pub fn expected_expit(b: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return expit(b);
    }
    let n = 4000;
    let h = 20.0 / n as f64;
    (0..=n)
        .map(|i| {
            let z = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * normal_pdf(z) * expit(b + tau * z)
        })
        .sum::<f64>()
        * h
}

/// Intercept `b` with `E[expit(b + τZ)] = rate`.
pub fn calibrate_intercept(rate: f64, tau: f64) -> Result<f64> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidData(format!(
            "cannot calibrate a masking intercept to rate {rate}; supply intercepts explicitly"
        )));
    }
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_expit(mid, tau) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws zero-mean Matérn fields over a fixed set of cells.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    factor: Option<DMatrix<f64>>,
    n: usize,
}

impl FieldSampler {
    pub fn new(cells: &[GridCell], params: &MaskModelParams) -> Result<Self> {
        params.validate()?;
        let n = cells.len();
        if params.sigma_gp == 0.0 || n == 0 {
            return Ok(Self { factor: None, n });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let d = ((cells[i].lon - cells[j].lon).powi(2) + (cells[i].lat - cells[j].lat).powi(2)).sqrt();
            matern_cov(d, params.range, params.sigma_gp, params.nu) + if i == j { JITTER } else { 0.0 }
        });
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("Matérn covariance is not positive definite after jitter".into()))?;
        Ok(Self { factor: Some(chol.unpack()), n })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.factor {
            None => vec![0.0; self.n],
            Some(l) => {
                let z = DVector::from_iterator(self.n, (0..self.n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (l * z).iter().copied().collect()
            }
        }
    }
}

/// `n_reps` independent field draws over `cells`, deterministic in `seed`.
pub fn simulate_field(cells: &[GridCell], params: &MaskModelParams, n_reps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = FieldSampler::new(cells, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_reps).map(|_| sampler.sample(&mut rng)).collect())
}

/// Validation keys for each fold and response.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldSet {
    pub n_folds: usize,
    pub cnt: Vec<BTreeSet<ObsKey>>,
    pub ba: Vec<BTreeSet<ObsKey>>,
}

impl FoldSet {
    pub fn empty(n_folds: usize) -> Self {
        Self { n_folds, cnt: vec![BTreeSet::new(); n_folds], ba: vec![BTreeSet::new(); n_folds] }
    }

    pub fn keys(&self, fold: usize, response: Response) -> &BTreeSet<ObsKey> {
        match response {
            Response::Cnt => &self.cnt[fold],
            Response::Ba => &self.ba[fold],
        }
    }

    fn keys_mut(&mut self, fold: usize, response: Response) -> &mut BTreeSet<ObsKey> {
        match response {
            Response::Cnt => &mut self.cnt[fold],
            Response::Ba => &mut self.ba[fold],
        }
    }

    /// Export with columns `fold, response, lon, lat, year, month`.
    pub fn write_csv<W: Write>(&self, ds: &GridDataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fold", "response", "lon", "lat", "year", "month"])?;
        for f in 0..self.n_folds {
            for r in [Response::Cnt, Response::Ba] {
                for k in self.keys(f, r) {
                    let c = &ds.cells()[k.cell];
                    w.write_record([
                        f.to_string(),
                        r.name().to_string(),
                        c.lon.to_string(),
                        c.lat.to_string(),
                        k.year.to_string(),
                        k.month.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(ds: &GridDataset, reader: R) -> Result<FoldSet> {
        #[derive(Deserialize)]
        struct Row {
            fold: usize,
            response: String,
            lon: f64,
            lat: f64,
            year: i32,
            month: u32,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let line = i as u64 + 2;
            let row = rec.map_err(|e| Error::MalformedRow { line, message: e.to_string() })?;
            let response: Response = row.response.parse().map_err(|_| Error::MalformedRow {
                line,
                message: format!("unknown response '{}'", row.response),
            })?;
            let cell = ds.cell_at(row.lon, row.lat).ok_or_else(|| Error::MalformedRow {
                line,
                message: format!("({}, {}) is not a cell of the dataset", row.lon, row.lat),
            })?;
            rows.push((row.fold, response, ObsKey { cell, year: row.year, month: row.month }));
        }
        let n_folds = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut out = FoldSet::empty(n_folds);
        for (f, r, k) in rows {
            out.keys_mut(f, r).insert(k);
        }
        Ok(out)
    }
}

/// Per-(fold, month) random stream.
fn stream_rng(seed: u64, fold: usize, month_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fold as u64) << 32) | month_index as u64);
    rng
}

/// Simulate `n_folds` draws of the masking process over every (year, month) in `ds`.
/// Entries already masked in `ds` never enter a validation set.
pub fn generate_folds(ds: &GridDataset, params: &MaskModelParams, n_folds: usize, seed: u64) -> Result<FoldSet> {
    if n_folds == 0 {
        return Err(Error::InvalidParameter("n_folds must be at least 1".into()));
    }
    let sampler = FieldSampler::new(ds.cells(), params)?;
    let mut by_month: BTreeMap<(i32, u32), Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.rows().iter().enumerate() {
        by_month.entry((r.year, r.month)).or_default().push(i);
    }
    let eps_sd = params.phi.sqrt();
    let mut out = FoldSet::empty(n_folds);
    for f in 0..n_folds {
        for (m, rows) in by_month.values().enumerate() {
            let mut rng = stream_rng(seed, f, m);
            let g = sampler.sample(&mut rng);
            let eps_cnt = eps_sd * rng.sample::<f64, _>(StandardNormal);
            let eps_ba = eps_sd * rng.sample::<f64, _>(StandardNormal);
            for &i in rows {
                let obs = &ds.rows()[i];
                let gi = g[obs.cell];
                let mask_cnt = rng.random::<f64>() < expit(params.beta0_cnt + gi + eps_cnt);
                let mask_ba = rng.random::<f64>() < expit(params.beta0_ba + params.beta * gi + eps_ba);
                if mask_cnt && obs.cnt.is_some() {
                    out.cnt[f].insert(obs.key());
                }
                if mask_ba && obs.ba.is_some() {
                    out.ba[f].insert(obs.key());
                }
            }
        }
    }
    Ok(out)
}

/// Keys in `ds` still eligible for validation (observed) for a response.
pub fn eligible_keys(ds: &GridDataset, response: Response) -> HashSet<ObsKey> {
    ds.rows().iter().filter(|r| r.response(response).is_some()).map(|r| r.key()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Record;
    use approx::assert_relative_eq;

    fn grid_ds(nx: usize, ny: usize, months: &[u32], mask_every: usize) -> GridDataset {
        let mut recs = Vec::new();
        let mut k = 0;
        for &m in months {
            for i in 0..nx {
                for j in 0..ny {
                    k += 1;
                    let masked = mask_every > 0 && k % mask_every == 0;
                    recs.push(Record {
                        lon: 0.5 * i as f64,
                        lat: 0.5 * j as f64,
                        year: 2000,
                        month: m,
                        covariates: vec![],
                        cnt: if masked { None } else { Some(1) },
                        ba: if masked && k % 2 == 0 { None } else { Some(2.0) },
                    });
                }
            }
        }
        GridDataset::from_records(recs, vec![], 0.5, &[3, 4, 5, 6, 7, 8, 9]).unwrap()
    }

    #[test]
    fn matern_examples() {
        assert_eq!(matern_cov(0.0, 2.0, 1.5, 1.0), 2.25);
        let rho = matern_cov(3.0, 3.0, 1.0, 1.0);
        assert_relative_eq!(rho, 0.1396674740152931, epsilon = 1e-12);
        assert!(rho > 0.05 && rho < 0.2);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let c = matern_cov(i as f64 * 0.05, 2.0, 1.0, 1.0);
            assert!(c < prev);
            prev = c;
        }
        // ν = 1/2 is the exponential covariance
        assert_relative_eq!(matern_cov(0.7, 2.0, 1.0, 0.5), (-2.0 * 0.7 / 2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn zero_sigma_field_is_zero_and_seeded_fields_repeat() {
        let ds = grid_ds(4, 4, &[3], 0);
        let p0 = MaskModelParams { sigma_gp: 0.0, ..Default::default() };
        assert!(simulate_field(ds.cells(), &p0, 3, 1).unwrap().iter().flatten().all(|&v| v == 0.0));
        let p = MaskModelParams::default();
        let a = simulate_field(ds.cells(), &p, 2, 9).unwrap();
        assert_eq!(a, simulate_field(ds.cells(), &p, 2, 9).unwrap());
        assert_ne!(a, simulate_field(ds.cells(), &p, 2, 10).unwrap());
    }

    #[test]
    fn field_covariance_matches_matern() {
        let ds = grid_ds(2, 1, &[3], 0);
        let p = MaskModelParams { range: 1.5, sigma_gp: 1.2, ..Default::default() };
        let n = 2000;
        let draws = simulate_field(ds.cells(), &p, n, 4).unwrap();
        let prods: Vec<f64> = draws.iter().map(|d| d[0] * d[1]).collect();
        let mean = prods.iter().sum::<f64>() / n as f64;
        let sd = (prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let target = matern_cov(0.5, 1.5, 1.2, 1.0);
        assert!((mean - target).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn degenerate_process_masks_half() {
        let ds = grid_ds(10, 10, &[3, 4, 5, 6, 7, 8, 9], 0);
        let p = MaskModelParams { sigma_gp: 0.0, phi: 0.0, ..Default::default() };
        assert_eq!(p.marginal_rates(), (0.5, 0.5));
        let folds = generate_folds(&ds, &p, 5, 3).unwrap();
        let n = (ds.n_rows() * 5) as f64;
        let rate = folds.cnt.iter().map(|s| s.len()).sum::<usize>() as f64 / n;
        assert!((rate - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
        assert_eq!(folds.n_folds, 5);
    }

    #[test]
    fn premasked_keys_never_validated() {
        let ds = grid_ds(6, 6, &[3, 4, 5], 3);
        let p = MaskModelParams { beta0_cnt: 2.0, beta0_ba: 2.0, ..Default::default() };
        let folds = generate_folds(&ds, &p, 4, 1).unwrap();
        for r in [Response::Cnt, Response::Ba] {
            let ok = eligible_keys(&ds, r);
            for f in 0..4 {
                assert!(folds.keys(f, r).iter().all(|k| ok.contains(k)));
            }
        }
        assert!(!folds.cnt[0].is_empty());
    }

    #[test]
    fn seeded_folds_repeat() {
        let ds = grid_ds(5, 5, &[3, 4], 0);
        let p = MaskModelParams::default();
        assert_eq!(generate_folds(&ds, &p, 2, 7).unwrap(), generate_folds(&ds, &p, 2, 7).unwrap());
        assert!(generate_folds(&ds, &p, 0, 7).is_err());
    }

    #[test]
    fn calibration_hits_observed_rate() {
        let ds = grid_ds(6, 6, &[3, 4, 5], 4);
        let p = MaskModelParams::default().calibrated(&ds).unwrap();
        let (rc, rb) = p.marginal_rates();
        let n = ds.n_rows() as f64;
        let obs_c = ds.rows().iter().filter(|r| r.cnt.is_none()).count() as f64 / n;
        let obs_b = ds.rows().iter().filter(|r| r.ba.is_none()).count() as f64 / n;
        assert_relative_eq!(rc, obs_c, epsilon = 1e-9);
        assert_relative_eq!(rb, obs_b, epsilon = 1e-9);
        assert!(MaskModelParams::default().calibrated(&grid_ds(2, 2, &[3], 0)).is_err());
        assert_relative_eq!(expected_expit(0.0, 1.3), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn folds_csv_roundtrip() {
        let ds = grid_ds(4, 3, &[3, 4], 5);
        let folds = generate_folds(&ds, &MaskModelParams::default(), 3, 2).unwrap();
        let mut buf = Vec::new();
        folds.write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("fold,response,lon,lat,year,month\n"));
        let back = FoldSet::read_csv(&ds, buf.as_slice()).unwrap();
        // folds with no keys at the end cannot be recovered from the file
        assert_eq!(back.cnt, folds.cnt[..back.n_folds]);
        let bad = "fold,response,lon,lat,year,month\n0,CNT,0.1,0,2000,3\n";
        assert!(matches!(FoldSet::read_csv(&ds, bad.as_bytes()), Err(Error::MalformedRow { line: 2, .. })));
    }
}
