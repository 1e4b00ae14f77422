//! Seeded synthetic gridded data with known covariate effects: dGPD counts and
//! zero / medium / large burned areas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::{GridDataset, Record};
use crate::error::{Error, Result};
use crate::special::expit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub nx: usize,
    pub ny: usize,
    pub years: Vec<i32>,
    pub months: Vec<u32>,
    pub lon0: f64,
    pub lat0: f64,
    pub spacing: f64,
    /// dGPD tail parameter of the counts.
    pub alpha: f64,
    /// GPD shape of burned-area excesses.
    pub xi: f64,
    /// Medium / large threshold (acres).
    pub u: f64,
    /// Gamma shape of `log(1 + BA)` for medium fires.
    pub k_shape: f64,
    pub mask_rate_cnt: f64,
    pub mask_rate_ba: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nx: 20,
            ny: 15,
            years: vec![2001, 2002],
            months: (3..=9).collect(),
            lon0: -110.25,
            lat0: 35.25,
            spacing: 0.5,
            alpha: 5.0,
            xi: 0.8,
            u: 200.0,
            k_shape: 2.0,
            mask_rate_cnt: 0.1,
            mask_rate_ba: 0.1,
            seed: 0,
        }
    }
}

/// Log of the dGPD scale `λ(x)` of the counts; `θ = −log λ`.
pub fn count_log_scale(x1: f64, x2: f64) -> f64 {
    -2.0 + 6.0 * x1 - 2.0 * x2 * x2
}

/// Probability that a fire month is large (`BA > u`).
pub fn large_prob(x1: f64, x2: f64, cnt: u64) -> f64 {
    expit(-3.0 + 2.0 * x1 + 1.0 * x2 + 0.5 * (cnt as f64).ln_1p())
}

/// Mean of `log(1 + BA)` for medium fires before truncation.
pub fn medium_log_mean(x2: f64) -> f64 {
    (0.6 + 1.2 * x2).exp()
}

/// GPD scale of large-fire excesses.
pub fn large_scale(x1: f64) -> f64 {
    80.0 * (1.5 * x1).exp()
}

/// One dGPD draw with scale `λ` and tail parameter `α`: `floor(λ (U^{-1/α} − 1))`.
pub fn draw_dgpd<R: Rng + ?Sized>(lambda: f64, alpha: f64, rng: &mut R) -> u64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    (lambda * (-u.ln() / alpha).exp_m1()).floor() as u64
}

pub fn generate(cfg: &SynthConfig) -> Result<GridDataset> {
    if cfg.nx == 0 || cfg.ny == 0 || cfg.years.is_empty() || cfg.months.is_empty() {
        return Err(Error::InvalidParameter("synthetic grid and period must be nonempty".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.xi > 0.0 && cfg.u > 0.0 && cfg.k_shape > 0.0 && cfg.spacing > 0.0) {
        return Err(Error::InvalidParameter("alpha, xi, u, k_shape and spacing must be positive".into()));
    }
    for r in [cfg.mask_rate_cnt, cfg.mask_rate_ba] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("mask rate {r} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trunc = cfg.u.ln_1p();
    // a fixed per-cell offset gives the covariates spatial structure
    let cell_effect: Vec<f64> = (0..cfg.nx * cfg.ny).map(|_| rng.random::<f64>()).collect();
    let mut recs = Vec::new();
    for &year in &cfg.years {
        for &month in &cfg.months {
            for iy in 0..cfg.ny {
                for ix in 0..cfg.nx {
                    let ce = cell_effect[iy * cfg.nx + ix];
                    let x1 = (0.6 * ce + 0.4 * rng.random::<f64>()).clamp(0.0, 1.0);
                    let x2: f64 = rng.random();
                    let noise: f64 = rng.random();
                    let lambda = count_log_scale(x1, x2).exp();
                    let cnt = draw_dgpd(lambda, cfg.alpha, &mut rng);
                    let ba = if cnt == 0 {
                        0.0
                    } else if rng.random::<f64>() < large_prob(x1, x2, cnt) {
                        let v: f64 = rng.random();
                        cfg.u + large_scale(x1) * ((-cfg.xi * (1.0 - v).ln()).exp_m1()) / cfg.xi
                    } else {
                        let mean = medium_log_mean(x2);
                        let g = Gamma::new(cfg.k_shape, mean / cfg.k_shape).expect("valid gamma");
                        let z = loop {
                            let z: f64 = g.sample(&mut rng);
                            if z > 0.0 && z <= trunc {
                                break z;
                            }
                        };
                        z.exp_m1()
                    };
                    let mask_cnt = rng.random::<f64>() < cfg.mask_rate_cnt;
                    let mask_ba = rng.random::<f64>() < cfg.mask_rate_ba;
                    recs.push(Record {
                        lon: cfg.lon0 + cfg.spacing * ix as f64,
                        lat: cfg.lat0 + cfg.spacing * iy as f64,
                        year,
                        month,
                        covariates: vec![x1, x2, noise],
                        cnt: (!mask_cnt).then_some(cnt),
                        ba: (!mask_ba).then_some(ba),
                    });
                }
            }
        }
    }
    GridDataset::from_records(recs, vec!["x1".into(), "x2".into(), "noise".into()], cfg.spacing, &cfg.months)
}
