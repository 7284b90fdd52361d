//! Seeded synthetic regression benchmarks with analytically known
//! heteroscedastic noise densities.
//!
//! Targets are `mean(x) + sigma(x) * eta` where `eta` is standardized
//! (zero-mean, unit-variance) noise with a closed-form log-density, so the
//! learned standardized densities can be scored against an exact oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor2;

pub const FEATURE_DIM: usize = 2;
pub const TARGET_DIM: usize = 2;

/// Skew mixture components: `0.7 N(-0.4, 0.6^2) + 0.3 N(14/15, 0.8^2)`,
/// zero-mean by construction, then rescaled to unit variance.
const MIX_W1: f64 = 0.7;
const MIX_MU1: f64 = -0.4;
const MIX_SD1: f64 = 0.6;
const MIX_W2: f64 = 0.3;
const MIX_MU2: f64 = 14.0 / 15.0;
const MIX_SD2: f64 = 0.8;

fn mix_std() -> f64 {
    (MIX_W1 * (MIX_SD1 * MIX_SD1 + MIX_MU1 * MIX_MU1)
        + MIX_W2 * (MIX_SD2 * MIX_SD2 + MIX_MU2 * MIX_MU2))
        .sqrt()
}

/// Families of standardized observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianHetero,
    LaplaceHetero,
    SkewMixture,
    NoiseFree,
}

impl NoiseKind {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::GaussianHetero => "gaussian_hetero",
            NoiseKind::LaplaceHetero => "laplace_hetero",
            NoiseKind::SkewMixture => "skew_mixture",
            NoiseKind::NoiseFree => "noise_free",
        }
    }
}

/// Noise-free regression mean, componentwise scaled into [-1, 1].
pub fn mean_function(x: &[f64]) -> [f64; 2] {
    let a = (x[0].sin() + 0.5 * x[1]) / (1.0 + std::f64::consts::FRAC_PI_2);
    let b = (x[1].cos() - 0.3 * x[0]) / (1.0 + 0.3 * std::f64::consts::PI);
    [a, b]
}

/// Input-dependent noise scale, shared across output dimensions; spans a
/// six-fold range over the feature domain.
pub fn sigma_function(x: &[f64]) -> f64 {
    0.02 + 0.10 * x[0].sin().abs()
}

fn draw_unit_laplace<R: Rng>(rng: &mut R) -> f64 {
    // Inverse CDF of the unit-variance Laplace (scale 1/sqrt(2)).
    let b = std::f64::consts::FRAC_1_SQRT_2;
    let u: f64 = rng.random();
    let p = u - 0.5;
    let t = (1.0 - 2.0 * p.abs()).max(f64::MIN_POSITIVE);
    -p.signum() * b * t.ln()
}

fn draw_skew<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let z: f64 = StandardNormal.sample(rng);
    let raw = if u < MIX_W1 {
        MIX_MU1 + MIX_SD1 * z
    } else {
        MIX_MU2 + MIX_SD2 * z
    };
    raw / mix_std()
}

/// One standardized noise draw per output dimension.
fn draw_noise<R: Rng>(kind: NoiseKind, rng: &mut R) -> [f64; TARGET_DIM] {
    let mut eta = [0.0; TARGET_DIM];
    for e in eta.iter_mut() {
        *e = match kind {
            NoiseKind::GaussianHetero => StandardNormal.sample(rng),
            NoiseKind::LaplaceHetero => draw_unit_laplace(rng),
            NoiseKind::SkewMixture => draw_skew(rng),
            NoiseKind::NoiseFree => 0.0,
        };
    }
    eta
}

/// Closed-form log-density of the standardized noise `eta` (product over
/// dimensions). `NoiseFree` has no density.
pub fn true_noise_log_density(kind: NoiseKind, eta: &[f64]) -> Result<f64> {
    if eta.is_empty() {
        return Err(Error::Empty("noise density of an empty vector".into()));
    }
    let per_dim = |v: f64| -> Result<f64> {
        Ok(match kind {
            NoiseKind::GaussianHetero => {
                -crate::lik::HALF_LN_2PI - 0.5 * v * v
            }
            NoiseKind::LaplaceHetero => {
                // Unit variance means scale b = 1/sqrt(2).
                let b = std::f64::consts::FRAC_1_SQRT_2;
                -(2.0 * b).ln() - v.abs() / b
            }
            NoiseKind::SkewMixture => {
                let c = mix_std();
                let x = c * v;
                let comp = |mu: f64, sd: f64| {
                    let z = (x - mu) / sd;
                    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                };
                (c * (MIX_W1 * comp(MIX_MU1, MIX_SD1) + MIX_W2 * comp(MIX_MU2, MIX_SD2))).ln()
            }
            NoiseKind::NoiseFree => {
                return Err(Error::Config(
                    "noise_free has no noise density".into(),
                ))
            }
        })
    };
    let mut total = 0.0;
    for &v in eta {
        total += per_dim(v)?;
    }
    Ok(total)
}

/// Draw `n` standardized noise vectors; the raw material for density fits.
pub fn gen_noise(kind: NoiseKind, n: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * TARGET_DIM);
    for _ in 0..n {
        data.extend(draw_noise(kind, &mut rng));
    }
    Tensor2::from_vec(n, TARGET_DIM, data).expect("noise draws are finite")
}

/// Synthetic samples plus the exact noise-scale oracle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor2,
    pub targets: Tensor2,
    pub true_sigma: Tensor2,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pure function of `(kind, n, seed)`: features uniform on `[-pi, pi]^2`,
/// targets `mean(x) + sigma(x) * eta`. Per sample the rng is consumed as
/// feature draws first, then one noise draw per output dimension.
pub fn gen_dataset(kind: NoiseKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * FEATURE_DIM);
    let mut targets = Vec::with_capacity(n * TARGET_DIM);
    let mut sigmas = Vec::with_capacity(n * TARGET_DIM);
    for _ in 0..n {
        let x = [
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        ];
        let mean = mean_function(&x);
        let sigma = sigma_function(&x);
        features.extend(x);
        if kind == NoiseKind::NoiseFree {
            targets.extend(mean);
        } else {
            let eta = draw_noise(kind, &mut rng);
            for d in 0..TARGET_DIM {
                targets.push(mean[d] + sigma * eta[d]);
            }
        }
        sigmas.extend([sigma; TARGET_DIM]);
    }
    Ok(Dataset {
        features: Tensor2::from_vec(n, FEATURE_DIM, features)?,
        targets: Tensor2::from_vec(n, TARGET_DIM, targets)?,
        true_sigma: Tensor2::from_vec(n, TARGET_DIM, sigmas)?,
        noise: kind,
        seed,
    })
}

fn take_rows(ds: &Dataset, idx: &[usize]) -> Result<Dataset> {
    let gather = |t: &Tensor2| -> Result<Tensor2> {
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        Tensor2::from_vec(idx.len(), t.cols(), data)
    };
    Ok(Dataset {
        features: gather(&ds.features)?,
        targets: gather(&ds.targets)?,
        true_sigma: gather(&ds.true_sigma)?,
        noise: ds.noise,
        seed: ds.seed,
    })
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Disjoint seeded split into `floor(n * fraction)` and the remainder.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (ds.len() as f64 * train_fraction).floor() as usize;
    split_count(ds, n_train, seed)
}

/// Split by explicit train count after a seeded shuffle.
pub fn split_count(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n_train == 0 || n_train >= n {
        return Err(Error::Empty(format!(
            "split of {n} rows into {n_train} train leaves one side empty"
        )));
    }
    let idx = shuffled_indices(n, seed);
    Ok((take_rows(ds, &idx[..n_train])?, take_rows(ds, &idx[n_train..])?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    schema_version: u32,
    kind: NoiseKind,
    seed: u64,
    rows: usize,
    feature_cols: Vec<String>,
    target_cols: Vec<String>,
    sigma_cols: Vec<String>,
}

const SIDECAR_VERSION: u32 = 1;

impl Dataset {
    /// Write `<stem>.csv` (columns f1..fF, t1..tD, s1..sD) plus the JSON
    /// sidecar `<stem>.json` holding kind, seed, and the column schema.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));

        let f = self.features.cols();
        let d = self.targets.cols();
        let feature_cols: Vec<String> = (1..=f).map(|i| format!("f{i}")).collect();
        let target_cols: Vec<String> = (1..=d).map(|i| format!("t{i}")).collect();
        let sigma_cols: Vec<String> = (1..=d).map(|i| format!("s{i}")).collect();

        let mut w = csv::Writer::from_path(&csv_path)?;
        let header: Vec<&str> = feature_cols
            .iter()
            .chain(&target_cols)
            .chain(&sigma_cols)
            .map(|s| s.as_str())
            .collect();
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut record: Vec<String> = Vec::with_capacity(f + 2 * d);
            for v in self.features.row(r) {
                record.push(format!("{v}"));
            }
            for v in self.targets.row(r) {
                record.push(format!("{v}"));
            }
            for v in self.true_sigma.row(r) {
                record.push(format!("{v}"));
            }
            w.write_record(&record)?;
        }
        w.flush()?;

        let sidecar = Sidecar {
            schema_version: SIDECAR_VERSION,
            kind: self.noise,
            seed: self.seed,
            rows: self.len(),
            feature_cols,
            target_cols,
            sigma_cols,
        };
        let mut json = serde_json::to_string_pretty(&sidecar)?;
        json.push('\n');
        std::fs::write(&json_path, json)?;
        Ok((csv_path, json_path))
    }

    /// Load a dataset from its CSV path; the sidecar is expected alongside
    /// with the same stem.
    pub fn load_files(csv_path: &Path) -> Result<Dataset> {
        let json_path = csv_path.with_extension("json");
        let raw = std::fs::read_to_string(&json_path).map_err(|e| {
            Error::Config(format!(
                "missing dataset sidecar {}: {e}",
                json_path.display()
            ))
        })?;
        let sidecar: Sidecar = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("bad dataset sidecar: {e}")))?;
        if sidecar.schema_version != SIDECAR_VERSION {
            return Err(Error::Config(format!(
                "unsupported dataset schema_version {}",
                sidecar.schema_version
            )));
        }
        let f = sidecar.feature_cols.len();
        let d = sidecar.target_cols.len();

        let mut reader = csv::Reader::from_path(csv_path)?;
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut sigmas = Vec::new();
        let mut rows = 0usize;
        for record in reader.records() {
            let record = record?;
            if record.len() != f + 2 * d {
                return Err(Error::Config(format!(
                    "dataset row {} has {} columns, expected {}",
                    rows + 1,
                    record.len(),
                    f + 2 * d
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad float {s:?}: {e}")))
            };
            for i in 0..f {
                features.push(parse(&record[i])?);
            }
            for i in 0..d {
                targets.push(parse(&record[f + i])?);
            }
            for i in 0..d {
                let s = parse(&record[f + d + i])?;
                if !(s > 0.0) {
                    return Err(Error::Config(format!(
                        "true_sigma must be positive, got {s}"
                    )));
                }
                sigmas.push(s);
            }
            rows += 1;
        }
        if rows != sidecar.rows {
            return Err(Error::Config(format!(
                "sidecar says {} rows, csv has {rows}",
                sidecar.rows
            )));
        }
        Ok(Dataset {
            features: Tensor2::from_vec(rows, f, features)?,
            targets: Tensor2::from_vec(rows, d, targets)?,
            true_sigma: Tensor2::from_vec(rows, d, sigmas)?,
            noise: sidecar.kind,
            seed: sidecar.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_targets_equal_the_mean() {
        let ds = gen_dataset(NoiseKind::NoiseFree, 64, 3).unwrap();
        for r in 0..ds.len() {
            let m = mean_function(ds.features.row(r));
            assert_eq!(ds.targets.row(r), &m[..]);
        }
    }

    #[test]
    fn generation_is_pure_in_the_seed() {
        for kind in [
            NoiseKind::GaussianHetero,
            NoiseKind::LaplaceHetero,
            NoiseKind::SkewMixture,
            NoiseKind::NoiseFree,
        ] {
            let a = gen_dataset(kind, 200, 9).unwrap();
            let b = gen_dataset(kind, 200, 9).unwrap();
            assert_eq!(a, b);
            let c = gen_dataset(kind, 200, 10).unwrap();
            assert_ne!(a.targets, c.targets);
        }
    }

    #[test]
    fn sigma_is_positive_and_spans_six_fold() {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 5000, 1).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &s in ds.true_sigma.data() {
            assert!(s > 0.0);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        assert!(hi / lo >= 5.0, "spread {lo}..{hi}");
    }

    #[test]
    fn laplace_noise_moments() {
        let n = 100_000;
        let ds = gen_dataset(NoiseKind::LaplaceHetero, n, 7).unwrap();
        // Standardize the residuals with the stored oracle scale.
        let mut std_noise = Vec::with_capacity(n * TARGET_DIM);
        for r in 0..n {
            let m = mean_function(ds.features.row(r));
            for d in 0..TARGET_DIM {
                std_noise.push((ds.targets.get(r, d) - m[d]) / ds.true_sigma.get(r, d));
            }
        }
        let len = std_noise.len() as f64;
        let mean: f64 = std_noise.iter().sum::<f64>() / len;
        let var: f64 = std_noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
        let m4: f64 = std_noise.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / len;
        let excess_kurtosis = m4 / (var * var) - 3.0;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
        assert!(
            (excess_kurtosis - 3.0).abs() < 0.3,
            "excess kurtosis {excess_kurtosis}"
        );
    }

    #[test]
    fn all_kinds_are_zero_mean_unit_variance() {
        for kind in [
            NoiseKind::GaussianHetero,
            NoiseKind::LaplaceHetero,
            NoiseKind::SkewMixture,
        ] {
            let noise = gen_noise(kind, 200_000, 5);
            let len = noise.data().len() as f64;
            let mean: f64 = noise.data().iter().sum::<f64>() / len;
            let var: f64 = noise.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
            assert!(mean.abs() < 0.01, "{kind:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.02, "{kind:?} var {var}");
        }
    }

    #[test]
    fn noise_density_values() {
        let v = true_noise_log_density(NoiseKind::GaussianHetero, &[0.0, 0.0]).unwrap();
        assert!((v + crate::lik::LN_2PI).abs() < 1e-12);
        let v = true_noise_log_density(NoiseKind::LaplaceHetero, &[0.0, 0.0]).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
        assert!(true_noise_log_density(NoiseKind::NoiseFree, &[0.0]).is_err());
    }

    #[test]
    fn noise_densities_integrate_to_one() {
        // Midpoint rule on [-8, 8]^2; the densities factorize but the grid
        // check runs in 2-D as the oracle is consumed that way.
        let n = 400;
        let lo = -8.0;
        let hi = 8.0;
        let step = (hi - lo) / n as f64;
        for kind in [
            NoiseKind::GaussianHetero,
            NoiseKind::LaplaceHetero,
            NoiseKind::SkewMixture,
        ] {
            let mut total = 0.0;
            for i in 0..n {
                let x = lo + (i as f64 + 0.5) * step;
                for j in 0..n {
                    let y = lo + (j as f64 + 0.5) * step;
                    total += true_noise_log_density(kind, &[x, y]).unwrap().exp();
                }
            }
            total *= step * step;
            assert!(
                (total - 1.0).abs() < 1e-3,
                "{kind:?} integrates to {total}"
            );
        }
    }

    #[test]
    fn split_shapes_and_coverage() {
        let ds = gen_dataset(NoiseKind::GaussianHetero, 10, 2).unwrap();
        let (train, test) = split(&ds, 0.5, 11).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);

        // Union of rows covers the original exactly once.
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for part in [&train, &test] {
            for r in 0..part.len() {
                seen.push(part.features.row(r).iter().map(|v| v.to_bits()).collect());
            }
        }
        seen.sort();
        let mut original: Vec<Vec<u64>> = (0..ds.len())
            .map(|r| ds.features.row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        original.sort();
        assert_eq!(seen, original);

        let (a1, b1) = split(&ds, 0.5, 11).unwrap();
        assert_eq!(a1, train);
        assert_eq!(b1, test);

        assert!(split(&ds, 0.05, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(NoiseKind::SkewMixture, 50, 4).unwrap();
        let (csv_path, _) = ds.write_files(dir.path(), "sample").unwrap();
        let loaded = Dataset::load_files(&csv_path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(NoiseKind::LaplaceHetero, 32, 8).unwrap();
        let (csv_path, json_path) = ds.write_files(dir.path(), "again").unwrap();
        let first_csv = std::fs::read(&csv_path).unwrap();
        let first_json = std::fs::read(&json_path).unwrap();
        ds.write_files(dir.path(), "again").unwrap();
        assert_eq!(first_csv, std::fs::read(&csv_path).unwrap());
        assert_eq!(first_json, std::fs::read(&json_path).unwrap());
    }
}
