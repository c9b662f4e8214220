//! Synthetic newsvendor instances.
//!
//! Features are zero-mean Gaussian with covariance `0.5^|i-j|`, realized as
//! `L z` with `L` the lower Cholesky factor and `z` standard normal. An
//! intercept column of ones is prepended. Demand follows one of three models
//! and is clipped at zero.
//!
//! Randomness: every instance is a pure function of one `u64` seed. The
//! generator is ChaCha8 with independent streams per purpose (in-sample rows,
//! test rows, cross-validation splits); normals use the ziggurat sampler
//! from `rand_distr`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const TEST_ROWS: usize = 1000;
pub const CV_SUBSET_CAP: usize = 200;

const STREAM_SAMPLE: u64 = 0;
const STREAM_TEST: u64 = 1;
const STREAM_SPLITS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `n` rows of `m + 1` entries; entry 0 is the intercept.
    pub features: Vec<Vec<f64>>,
    pub demands: Vec<f64>,
    pub m: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, demands: Vec<f64>) -> Result<Self> {
        if features.len() != demands.len() {
            return Err(invalid(format!("{} feature rows for {} demands", features.len(), demands.len())));
        }
        let width = features.first().map_or(1, Vec::len);
        if width == 0 {
            return Err(invalid("feature rows need an intercept column"));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != width {
                return Err(invalid(format!("row {i} has {} columns, expected {width}", row.len())));
            }
            if row[0] != 1.0 {
                return Err(invalid(format!("row {i} has intercept {}", row[0])));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("row {i} has a non-finite feature")));
            }
        }
        if demands.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(invalid("demands must be finite and nonnegative"));
        }
        Ok(Dataset { features, demands, m: width - 1 })
    }

    pub fn n(&self) -> usize {
        self.demands.len()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            demands: idx.iter().map(|&i| self.demands[i]).collect(),
            m: self.m,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.m != other.m {
            return Err(invalid("cannot concatenate datasets with different m"));
        }
        let mut features = self.features.clone();
        features.extend(other.features.iter().cloned());
        let mut demands = self.demands.clone();
        demands.extend(&other.demands);
        Ok(Dataset { features, demands, m: self.m })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_star: Vec<f64>,
    /// Over the `m` non-intercept features.
    pub z_star: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandKind {
    Linear,
    NonlinearHomoscedastic,
    NonlinearHeteroscedastic,
}

impl DemandKind {
    /// Noiseless base demand level, used to turn a coefficient of variation
    /// into a noise standard deviation.
    pub fn base_level(self) -> f64 {
        match self {
            DemandKind::Linear => 5.0,
            _ => 10.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DemandKind::Linear => "linear",
            DemandKind::NonlinearHomoscedastic => "homoscedastic",
            DemandKind::NonlinearHeteroscedastic => "heteroscedastic",
        }
    }

    fn code(self) -> u64 {
        match self {
            DemandKind::Linear => 0,
            DemandKind::NonlinearHomoscedastic => 1,
            DemandKind::NonlinearHeteroscedastic => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModelSpec {
    pub kind: DemandKind,
    pub sigma_eps: f64,
}

impl DemandModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(invalid(format!("sigma_eps must be positive, got {}", self.sigma_eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBundle {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
    pub spec: DemandModelSpec,
    pub seed: u64,
}

impl InstanceBundle {
    /// The in-sample set: training rows then validation rows.
    pub fn in_sample(&self) -> Dataset {
        self.train.concat(&self.validation).expect("train and validation share m")
    }
}

/// Training/validation index pairs into the in-sample set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplits {
    pub k: usize,
    pub splits: Vec<(Vec<usize>, Vec<usize>)>,
}

pub fn ground_truth_beta(m: usize) -> Result<GroundTruth> {
    if m < 4 {
        return Err(invalid(format!("ground truth needs m >= 4, got {m}")));
    }
    let s = 10f64.sqrt();
    let mut beta_star = vec![0.0; m + 1];
    beta_star[1..5].copy_from_slice(&[2.0 / s, -2.0 / s, -1.0 / s, 1.0 / s]);
    let z_star = beta_star[1..].iter().map(|&b| b != 0.0).collect();
    Ok(GroundTruth { beta_star, z_star })
}

/// Lower Cholesky factor of the `0.5^|i-j|` covariance.
pub fn feature_cholesky(m: usize) -> DMatrix<f64> {
    let cov = DMatrix::from_fn(m, m, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    cov.cholesky().expect("covariance is positive definite").l()
}

/// `n` rows with the intercept prepended.
pub fn sample_features<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 || m == 0 {
        return Err(invalid("sample_features needs n, m >= 1"));
    }
    let l = feature_cholesky(m);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let x = &l * z;
        let mut row = Vec::with_capacity(m + 1);
        row.push(1.0);
        row.extend(x.iter());
        rows.push(row);
    }
    Ok(rows)
}

/// Demand for one feature row given a noise draw `eps`.
pub fn gen_demand(x_row: &[f64], truth: &GroundTruth, kind: DemandKind, eps: f64) -> f64 {
    let t: f64 = x_row.iter().zip(&truth.beta_star).map(|(x, b)| x * b).sum();
    let d = match kind {
        DemandKind::Linear => 5.0 + t + eps,
        DemandKind::NonlinearHomoscedastic => 10.0 + (2.0 * t).sin() + 2.0 * (-16.0 * t * t).exp() + eps,
        DemandKind::NonlinearHeteroscedastic => {
            10.0 + (2.0 * t).sin() + 2.0 * (-16.0 * t * t).exp() + t.exp() * eps
        }
    };
    d.max(0.0)
}

fn draw_dataset(n: usize, m: usize, truth: &GroundTruth, spec: &DemandModelSpec, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let features = sample_features(n, m, rng)?;
    let noise = Normal::new(0.0, spec.sigma_eps).map_err(|e| invalid(e.to_string()))?;
    let demands = features.iter().map(|x| gen_demand(x, truth, spec.kind, noise.sample(rng))).collect();
    Ok(Dataset { features, demands, m })
}

/// Generates `n` in-sample rows split into training (first `ceil(n/2)`) and
/// validation rows, plus an independent test set of 1000 rows.
pub fn make_instance(n: usize, m: usize, spec: DemandModelSpec, seed: u64) -> Result<InstanceBundle> {
    if n < 2 {
        return Err(invalid(format!("an instance needs n >= 2, got {n}")));
    }
    spec.validate()?;
    let truth = ground_truth_beta(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SAMPLE);
    let s = draw_dataset(n, m, &truth, &spec, &mut rng)?;
    rng.set_stream(STREAM_TEST);
    rng.set_word_pos(0);
    let test = draw_dataset(TEST_ROWS, m, &truth, &spec, &mut rng)?;
    let n_train = n.div_ceil(2);
    let train = s.subset(&(0..n_train).collect::<Vec<_>>());
    let validation = s.subset(&(n_train..n).collect::<Vec<_>>());
    Ok(InstanceBundle { train, validation, test, truth, spec, seed })
}

/// `k` splits, each drawing `min(200, n)` distinct rows and halving them
/// (training gets the extra row when odd).
pub fn shuffle_split<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<CvSplits> {
    if k == 0 {
        return Err(invalid("shuffle_split needs K >= 1"));
    }
    if n < 2 {
        return Err(invalid("shuffle_split needs at least two rows"));
    }
    let size = n.min(CV_SUBSET_CAP);
    let n_train = size.div_ceil(2);
    let splits = (0..k)
        .map(|_| {
            let rows = sample(rng, n, size).into_vec();
            let (t, v) = rows.split_at(n_train);
            (t.to_vec(), v.to_vec())
        })
        .collect();
    Ok(CvSplits { k, splits })
}

/// Deterministic CV splits for an instance, on their own RNG stream.
pub fn instance_splits(bundle: &InstanceBundle, k: usize) -> Result<CvSplits> {
    let mut rng = ChaCha8Rng::seed_from_u64(bundle.seed);
    rng.set_stream(STREAM_SPLITS);
    shuffle_split(bundle.train.n() + bundle.validation.n(), k, &mut rng)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for one instance. Cost parameters are deliberately not part of
/// the key so that sweeps over `b` and `h` share instances.
pub fn instance_seed(master: u64, n: usize, m: usize, kind: DemandKind, sigma_eps: f64, rep: usize) -> u64 {
    [n as u64, m as u64, kind.code(), sigma_eps.to_bits(), rep as u64]
        .iter()
        .fold(splitmix64(master), |h, &v| splitmix64(h ^ v))
}

fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.m).map(|j| format!("x{j}")).collect();
    header.push("d".into());
    w.write_record(&header)?;
    for (x, d) in data.features.iter().zip(&data.demands) {
        let mut rec: Vec<String> = x[1..].iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{d:?}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x1..xm,d` rows (intercept implicit).
pub fn write_dataset_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_csv(path.as_ref(), data)
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    let width = header.len();
    if width < 1 || &header[width - 1] != "d" {
        return Err(invalid("last CSV column must be `d`"));
    }
    let mut features = Vec::new();
    let mut demands = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let mut row = vec![1.0];
        row.extend(&vals[..width - 1]);
        features.push(row);
        demands.push(vals[width - 1]);
    }
    let mut ds = Dataset::new(features, demands)?;
    ds.m = width - 1;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    spec: DemandModelSpec,
    truth: GroundTruth,
    n_train: usize,
    n_validation: usize,
    cv: Option<CvSplits>,
}

/// Writes `train.csv`, `validation.csv`, `test.csv` and `instance.json`
/// into `dir`.
pub fn save_instance(dir: impl AsRef<Path>, bundle: &InstanceBundle, cv: Option<&CvSplits>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("train.csv"), &bundle.train)?;
    write_csv(&dir.join("validation.csv"), &bundle.validation)?;
    write_csv(&dir.join("test.csv"), &bundle.test)?;
    let side = Sidecar {
        seed: bundle.seed,
        spec: bundle.spec,
        truth: bundle.truth.clone(),
        n_train: bundle.train.n(),
        n_validation: bundle.validation.n(),
        cv: cv.cloned(),
    };
    fs::write(dir.join("instance.json"), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn load_instance(dir: impl AsRef<Path>) -> Result<(InstanceBundle, Option<CvSplits>)> {
    let dir = dir.as_ref();
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join("instance.json"))?)?;
    let train = read_dataset_csv(dir.join("train.csv"))?;
    let validation = read_dataset_csv(dir.join("validation.csv"))?;
    let test = read_dataset_csv(dir.join("test.csv"))?;
    if train.n() != side.n_train || validation.n() != side.n_validation {
        return Err(Error::Validation("instance.json row counts disagree with the CSV files".into()));
    }
    let bundle = InstanceBundle { train, validation, test, truth: side.truth, spec: side.spec, seed: side.seed };
    Ok((bundle, side.cv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(sigma: f64) -> DemandModelSpec {
        DemandModelSpec { kind: DemandKind::Linear, sigma_eps: sigma }
    }

    #[test]
    fn ground_truth_for_ten_features() {
        let g = ground_truth_beta(10).unwrap();
        let s = 10f64.sqrt();
        let want = [0.0, 2.0, -2.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0].map(|v| v / s);
        assert_eq!(g.beta_star, want.to_vec());
        assert_eq!(g.z_star.iter().filter(|z| **z).count(), 4);
        assert_eq!(ground_truth_beta(4).unwrap().z_star, vec![true; 4]);
        assert_eq!(ground_truth_beta(8).unwrap().z_star.iter().filter(|z| **z).count(), 4);
        assert!(ground_truth_beta(3).is_err());
    }

    #[test]
    fn two_by_two_cholesky() {
        let l = feature_cholesky(2);
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn feature_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let m = 5;
        let rows = sample_features(n, m, &mut rng).unwrap();
        assert!(rows.iter().all(|r| r[0] == 1.0 && r.len() == m + 1));
        let mean = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        for j in 1..=m {
            assert!(mean(j).abs() < 4.0 / (n as f64).sqrt(), "column {j} mean {}", mean(j));
        }
        for j in 1..m {
            let (mj, mk) = (mean(j), mean(j + 1));
            let cov: f64 = rows.iter().map(|r| (r[j] - mj) * (r[j + 1] - mk)).sum::<f64>() / n as f64;
            let vj: f64 = rows.iter().map(|r| (r[j] - mj).powi(2)).sum::<f64>() / n as f64;
            let vk: f64 = rows.iter().map(|r| (r[j + 1] - mk).powi(2)).sum::<f64>() / n as f64;
            let corr = cov / (vj * vk).sqrt();
            assert!((corr - 0.5).abs() < 0.05, "corr({j},{}) = {corr}", j + 1);
        }
    }

    #[test]
    fn demand_models_by_hand() {
        // truth with beta'x = t for x = (1, t, 0, 0, 0) after scaling
        let truth = GroundTruth { beta_star: vec![0.0, 1.0, 0.0, 0.0, 0.0], z_star: vec![true, false, false, false] };
        let at = |t: f64| vec![1.0, t, 0.0, 0.0, 0.0];
        assert_eq!(gen_demand(&at(2.0), &truth, DemandKind::Linear, 0.0), 7.0);
        assert_eq!(gen_demand(&at(-6.0), &truth, DemandKind::Linear, 0.0), 0.0);
        assert_eq!(gen_demand(&at(0.0), &truth, DemandKind::NonlinearHomoscedastic, 0.0), 12.0);
        // heteroscedastic scales the noise by exp(t)
        let d = gen_demand(&at(1.0), &truth, DemandKind::NonlinearHeteroscedastic, 1.0);
        let want = 10.0 + 2f64.sin() + 2.0 * (-16f64).exp() + 1f64.exp();
        assert!((d - want).abs() < 1e-12);
        // a large negative draw is clipped for every kind
        for kind in [DemandKind::Linear, DemandKind::NonlinearHomoscedastic, DemandKind::NonlinearHeteroscedastic] {
            assert_eq!(gen_demand(&at(0.5), &truth, kind, -1e3), 0.0);
        }
    }

    #[test]
    fn instance_shapes_and_determinism() {
        let b = make_instance(100, 10, lin(1.0), 5).unwrap();
        assert_eq!((b.train.n(), b.validation.n(), b.test.n()), (50, 50, 1000));
        let b2 = make_instance(100, 10, lin(1.0), 5).unwrap();
        assert_eq!(b, b2);
        let c = make_instance(40, 8, lin(1.0), 1).unwrap();
        assert_eq!(c.in_sample().features.len(), 40);
        assert!(c.in_sample().features.iter().all(|r| r.len() == 9));
        let odd = make_instance(41, 8, lin(1.0), 1).unwrap();
        assert_eq!((odd.train.n(), odd.validation.n()), (21, 20));
        assert_ne!(make_instance(40, 8, lin(1.0), 2).unwrap().train, c.train);
    }

    #[test]
    fn vanishing_noise_gives_the_affine_demand() {
        let b = make_instance(200, 6, lin(1e-9), 3).unwrap();
        let s = b.in_sample();
        let worst = s
            .features
            .iter()
            .zip(&s.demands)
            .map(|(x, d)| {
                let t: f64 = x.iter().zip(&b.truth.beta_star).map(|(a, c)| a * c).sum();
                (d - (5.0 + t).max(0.0)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6);
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = shuffle_split(100, 3, &mut rng).unwrap();
        for (t, v) in &s.splits {
            assert_eq!((t.len(), v.len()), (50, 50));
            let mut all: Vec<usize> = t.iter().chain(v).copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 100);
        }
        let s = shuffle_split(1000, 2, &mut rng).unwrap();
        assert!(s.splits.iter().all(|(t, v)| t.len() == 100 && v.len() == 100));
        assert_eq!(shuffle_split(60, 1, &mut rng).unwrap().splits.len(), 1);
        assert!(shuffle_split(60, 0, &mut rng).is_err());
    }

    #[test]
    fn seeds_ignore_nothing_but_costs() {
        let a = instance_seed(1, 100, 10, DemandKind::Linear, 1.0, 0);
        assert_eq!(a, instance_seed(1, 100, 10, DemandKind::Linear, 1.0, 0));
        assert_ne!(a, instance_seed(1, 100, 10, DemandKind::Linear, 1.0, 1));
        assert_ne!(a, instance_seed(1, 100, 10, DemandKind::Linear, 0.5, 0));
        assert_ne!(a, instance_seed(2, 100, 10, DemandKind::Linear, 1.0, 0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = make_instance(30, 5, lin(1.0), 8).unwrap();
        let cv = instance_splits(&b, 3).unwrap();
        save_instance(dir.path(), &b, Some(&cv)).unwrap();
        let header = fs::read_to_string(dir.path().join("train.csv")).unwrap();
        assert!(header.starts_with("x1,x2,x3,x4,x5,d\n"));
        let (back, cv_back) = load_instance(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(cv_back, Some(cv));
    }
}
