//! Randomized-trial cohort simulator with known potential outcomes.
//!
//! Outcomes live on the log-lesion scale `y = ln(count + 1)`. For arm `t`:
//!
//! ```text
//! f_t(x) = max(0, intercept_t + coeffs_t . x + interaction_strength * x[a_t] * x[b_t])
//! y_t    = max(0, f_t(x) + eps_t),   eps_t ~ N(0, s_t(x)^2)
//! s_t(x) = noise_base * softplus(1 + hetero_t . x) / softplus(1)
//! ```
//!
//! so `noise_base` is exactly the noise standard deviation when the
//! heteroscedastic coefficients are zero. Treatment is drawn from
//! `arm_probs` on its own random stream, independently of the features.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

pub const CONTROL: usize = 0;

/// Linear outcome model of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub n_features: usize,
    pub n_arms: usize,
    pub arm_probs: Vec<f64>,
    pub outcome_coeffs: Vec<ArmOutcome>,
    pub interaction_strength: f64,
    /// Feature pair whose product enters `f_t`, one pair per arm.
    pub interaction_pairs: Vec<[usize; 2]>,
    pub noise_base: f64,
    pub noise_hetero_coeffs: Vec<Vec<f64>>,
    pub seed: u64,
}

fn sparse(d: usize, entries: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for &(i, c) in entries {
        if i < d {
            v[i] = c;
        }
    }
    v
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self::heteroscedastic(2400, 0)
    }
}

impl CohortConfig {
    /// Three-arm heteroscedastic generator with a responder subgroup on arm 1.
    /// Features 3 and 4 drive both the outcome level and the noise scale, so
    /// patients with high expected lesion load are also the noisiest.
    pub fn heteroscedastic(n_patients: usize, seed: u64) -> Self {
        let d = 16;
        Self {
            n_patients,
            n_features: d,
            n_arms: 3,
            arm_probs: vec![0.34, 0.33, 0.33],
            outcome_coeffs: vec![
                ArmOutcome {
                    intercept: 1.3,
                    coeffs: sparse(d, &[(0, 0.1), (1, 0.1), (3, 0.35), (4, 0.25)]),
                },
                ArmOutcome {
                    intercept: 0.9,
                    coeffs: sparse(d, &[(0, 0.1), (1, -0.2), (3, 0.2), (4, 0.15)]),
                },
                ArmOutcome {
                    intercept: 1.0,
                    coeffs: sparse(d, &[(0, 0.1), (3, 0.15), (4, 0.2), (6, 0.15)]),
                },
            ],
            interaction_strength: 0.15,
            interaction_pairs: vec![[3, 4], [1, 3], [4, 6]],
            noise_base: 0.3,
            noise_hetero_coeffs: vec![
                sparse(d, &[(3, 1.8), (4, 1.2)]),
                sparse(d, &[(3, 1.8), (4, 1.2), (7, 0.3)]),
                sparse(d, &[(3, 1.8), (4, 1.2)]),
            ],
            seed,
        }
    }

    /// Three-arm linear generator with constant noise standard deviation
    /// `noise_sd`, intercepts high enough that clamping is negligible.
    pub fn homoscedastic_linear(n_patients: usize, noise_sd: f64, seed: u64) -> Self {
        let d = 16;
        Self {
            n_patients,
            n_features: d,
            n_arms: 3,
            arm_probs: vec![0.34, 0.33, 0.33],
            outcome_coeffs: vec![
                ArmOutcome { intercept: 2.5, coeffs: sparse(d, &[(0, 0.3), (1, 0.2), (2, -0.2)]) },
                ArmOutcome { intercept: 2.0, coeffs: sparse(d, &[(0, 0.3), (1, -0.2), (3, 0.1)]) },
                ArmOutcome { intercept: 2.2, coeffs: sparse(d, &[(0, 0.1), (2, 0.2), (4, -0.2)]) },
            ],
            interaction_strength: 0.0,
            interaction_pairs: vec![[0, 1]; 3],
            noise_base: noise_sd,
            noise_hetero_coeffs: vec![vec![0.0; d]; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.n_features == 0 {
            return bad("n_features must be positive".into());
        }
        if self.n_arms < 2 {
            return bad(format!("n_arms must be at least 2, got {}", self.n_arms));
        }
        for (name, len) in [
            ("arm_probs", self.arm_probs.len()),
            ("outcome_coeffs", self.outcome_coeffs.len()),
            ("interaction_pairs", self.interaction_pairs.len()),
            ("noise_hetero_coeffs", self.noise_hetero_coeffs.len()),
        ] {
            if len != self.n_arms {
                return bad(format!("{name} has {len} entries for {} arms", self.n_arms));
            }
        }
        if self.arm_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("arm_probs must be finite and nonnegative".into());
        }
        let total: f64 = self.arm_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("arm_probs sum to {total}, not 1"));
        }
        for (t, arm) in self.outcome_coeffs.iter().enumerate() {
            if arm.coeffs.len() != self.n_features {
                return bad(format!("outcome_coeffs[{t}] has {} coefficients", arm.coeffs.len()));
            }
            if !arm.intercept.is_finite() || arm.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("outcome_coeffs[{t}]")));
            }
        }
        for (t, h) in self.noise_hetero_coeffs.iter().enumerate() {
            if h.len() != self.n_features {
                return bad(format!("noise_hetero_coeffs[{t}] has {} coefficients", h.len()));
            }
            if h.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("noise_hetero_coeffs[{t}]")));
            }
        }
        if let Some(p) = self.interaction_pairs.iter().flatten().find(|&&i| i >= self.n_features) {
            return bad(format!("interaction feature index {p} out of range"));
        }
        if !self.interaction_strength.is_finite() || self.interaction_strength < 0.0 {
            return bad("interaction_strength must be finite and >= 0".into());
        }
        if !self.noise_base.is_finite() || self.noise_base <= 0.0 {
            return bad("noise_base must be finite and > 0".into());
        }
        Ok(())
    }

    /// Noiseless mean outcome `f_t(x)`.
    pub fn expected_outcome(&self, t: usize, x: &[f64]) -> f64 {
        let arm = &self.outcome_coeffs[t];
        let [a, b] = self.interaction_pairs[t];
        let linear: f64 = arm.intercept + dot(&arm.coeffs, x);
        (linear + self.interaction_strength * x[a] * x[b]).max(0.0)
    }

    /// Noise standard deviation `s_t(x)`.
    pub fn noise_sd(&self, t: usize, x: &[f64]) -> f64 {
        let h = &self.noise_hetero_coeffs[t];
        self.noise_base * softplus(1.0 + dot(h, x)) / softplus(1.0)
    }

    /// Population ATE of arm `t` for the unclamped linear part; exact when
    /// clamping never binds, since E[x] = 0 and E[x_a x_b] = [a == b].
    pub fn analytic_ate(&self, t: usize) -> f64 {
        let pair_mean = |p: [usize; 2]| if p[0] == p[1] { 1.0 } else { 0.0 };
        let mean = |t: usize| {
            self.outcome_coeffs[t].intercept
                + self.interaction_strength * pair_mean(self.interaction_pairs[t])
        };
        mean(t) - mean(CONTROL)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    pub features: Vec<f64>,
    pub treatment: usize,
    pub factual_outcome: f64,
    pub potential_outcomes: Vec<f64>,
    pub expected_outcomes: Vec<f64>,
}

impl PatientRecord {
    fn check_arm(&self, t: usize) -> Result<()> {
        if t == CONTROL {
            return Err(Error::InvalidArgument("ITE undefined for the control arm".into()));
        }
        if t >= self.expected_outcomes.len() {
            return Err(Error::InvalidArgument(format!("arm {t} out of range")));
        }
        Ok(())
    }

    /// Noiseless ITE `f_t(x) - f_0(x)`.
    pub fn true_expected_ite(&self, t: usize) -> Result<f64> {
        self.check_arm(t)?;
        Ok(self.expected_outcomes[t] - self.expected_outcomes[CONTROL])
    }

    /// Realized ITE `y_t - y_0`.
    pub fn true_realized_ite(&self, t: usize) -> Result<f64> {
        self.check_arm(t)?;
        Ok(self.potential_outcomes[t] - self.potential_outcomes[CONTROL])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub records: Vec<PatientRecord>,
    pub arm_counts: Vec<usize>,
}

/// Observational view: features, factual treatment and factual outcome only.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: usize,
    pub features: Vec<f64>,
    pub treatment: usize,
    pub outcome: f64,
}

impl Cohort {
    pub fn observations(&self) -> Vec<Observation> {
        self.records
            .iter()
            .map(|r| Observation {
                id: r.id,
                features: r.features.clone(),
                treatment: r.treatment,
                outcome: r.factual_outcome,
            })
            .collect()
    }

    pub fn n_arms(&self) -> usize {
        self.config.n_arms
    }
}

fn count_arms(records: &[PatientRecord], n_arms: usize) -> Vec<usize> {
    let mut counts = vec![0; n_arms];
    for r in records {
        counts[r.treatment] += 1;
    }
    counts
}

pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let d = config.n_features;
    let mut feature_rng = substream(config.seed, "cohort/features", 0);
    let mut assign_rng = substream(config.seed, "cohort/assignment", 0);
    let mut noise_rngs: Vec<_> = (0..config.n_arms)
        .map(|t| substream(config.seed, "cohort/noise", t as u64))
        .collect();

    let cumulative: Vec<f64> = config
        .arm_probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let mut records = Vec::with_capacity(config.n_patients);
    for id in 0..config.n_patients {
        let features: Vec<f64> = (0..d).map(|_| feature_rng.sample(StandardNormal)).collect();
        let u: f64 = assign_rng.random();
        let treatment = cumulative.iter().position(|&c| u < c).unwrap_or(config.n_arms - 1);
        let expected_outcomes: Vec<f64> =
            (0..config.n_arms).map(|t| config.expected_outcome(t, &features)).collect();
        let potential_outcomes: Vec<f64> = (0..config.n_arms)
            .map(|t| {
                let eps: f64 = noise_rngs[t].sample(StandardNormal);
                (expected_outcomes[t] + config.noise_sd(t, &features) * eps).max(0.0)
            })
            .collect();
        records.push(PatientRecord {
            id,
            factual_outcome: potential_outcomes[treatment],
            features,
            treatment,
            potential_outcomes,
            expected_outcomes,
        });
    }
    let arm_counts = count_arms(&records, config.n_arms);
    Ok(Cohort { config: config.clone(), records, arm_counts })
}

/// Sidecar and config paths that accompany an observational CSV.
pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cohort");
    let parent = path.parent().unwrap_or_else(|| Path::new(""));
    (parent.join(format!("{stem}.oracle.csv")), parent.join(format!("{stem}.config.json")))
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `path` (observational `id,x0..,treatment,y`), the oracle sidecar
/// `<stem>.oracle.csv` (`id,y0..,f0..`) and `<stem>.config.json`.
pub fn export_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let d = cohort.config.n_features;
    let m = cohort.config.n_arms;
    let mut header = vec!["id".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.push("treatment".into());
    header.push("y".into());
    write_csv(
        path,
        &header,
        cohort.records.iter().map(|r| {
            let mut row = vec![r.id.to_string()];
            row.extend(r.features.iter().map(f64::to_string));
            row.push(r.treatment.to_string());
            row.push(r.factual_outcome.to_string());
            row
        }),
    )?;

    let (oracle_path, config_path) = sidecar_paths(path);
    let mut header = vec!["id".to_string()];
    header.extend((0..m).map(|t| format!("y{t}")));
    header.extend((0..m).map(|t| format!("f{t}")));
    write_csv(
        &oracle_path,
        &header,
        cohort.records.iter().map(|r| {
            let mut row = vec![r.id.to_string()];
            row.extend(r.potential_outcomes.iter().map(f64::to_string));
            row.extend(r.expected_outcomes.iter().map(f64::to_string));
            row
        }),
    )?;

    let mut f = BufWriter::new(File::create(config_path)?);
    serde_json::to_writer_pretty(&mut f, &cohort.config)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| {
            Error::Malformed { path: path.to_path_buf(), reason: e.to_string() }
        })?;
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })
    }

    fn malformed(&self, row: usize, reason: impl Into<String>) -> Error {
        Error::Malformed { path: self.path.clone(), reason: format!("row {row}: {}", reason.into()) }
    }

    fn float(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        let v: f64 = raw.trim().parse().map_err(|_| self.malformed(row, format!("bad number `{raw}`")))?;
        if !v.is_finite() {
            return Err(self.malformed(row, format!("non-finite `{}`", self.header[col])));
        }
        Ok(v)
    }

    fn int(&self, row: usize, col: usize) -> Result<usize> {
        let raw = &self.rows[row][col];
        raw.trim().parse().map_err(|_| self.malformed(row, format!("bad integer `{raw}`")))
    }
}

fn read_observations(path: &Path) -> Result<(Vec<Observation>, usize)> {
    let table = Table::read(path)?;
    let id_col = table.column("id")?;
    let t_col = table.column("treatment")?;
    let y_col = table.column("y")?;
    let d = table.header.iter().filter(|h| h.starts_with('x')).count();
    let x_cols = (0..d).map(|j| table.column(&format!("x{j}"))).collect::<Result<Vec<_>>>()?;
    if table.header.len() != d + 3 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected {} columns, found {}", d + 3, table.header.len()),
        });
    }
    let mut out = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        out.push(Observation {
            id: table.int(i, id_col)?,
            features: x_cols.iter().map(|&c| table.float(i, c)).collect::<Result<_>>()?,
            treatment: table.int(i, t_col)?,
            outcome: table.float(i, y_col)?,
        });
    }
    Ok((out, d))
}

/// Reads only the observational view of an exported cohort.
pub fn import_observations(path: &Path) -> Result<Vec<Observation>> {
    Ok(read_observations(path)?.0)
}

pub fn import_cohort(path: &Path) -> Result<Cohort> {
    let (oracle_path, config_path) = sidecar_paths(path);
    let config: CohortConfig = serde_json::from_reader(File::open(&config_path)?)?;
    config.validate()?;
    let (obs, d) = read_observations(path)?;
    if d != config.n_features {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{d} feature columns, config has {}", config.n_features),
        });
    }
    let m = config.n_arms;
    let oracle = Table::read(&oracle_path)?;
    let id_col = oracle.column("id")?;
    let y_cols = (0..m).map(|t| oracle.column(&format!("y{t}"))).collect::<Result<Vec<_>>>()?;
    let f_cols = (0..m).map(|t| oracle.column(&format!("f{t}"))).collect::<Result<Vec<_>>>()?;
    if oracle.header.len() != 1 + 2 * m {
        return Err(Error::Malformed {
            path: oracle_path.clone(),
            reason: format!("expected {} columns, found {}", 1 + 2 * m, oracle.header.len()),
        });
    }
    if oracle.rows.len() != obs.len() {
        return Err(Error::Malformed {
            path: oracle_path.clone(),
            reason: format!("{} rows, observational file has {}", oracle.rows.len(), obs.len()),
        });
    }
    let mut records = Vec::with_capacity(obs.len());
    for (i, o) in obs.into_iter().enumerate() {
        if oracle.int(i, id_col)? != o.id {
            return Err(oracle.malformed(i, "id does not match observational row"));
        }
        if o.treatment >= m {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("row {i}: treatment {} out of range", o.treatment),
            });
        }
        let potential_outcomes: Vec<f64> = y_cols.iter().map(|&c| oracle.float(i, c)).collect::<Result<_>>()?;
        let expected_outcomes: Vec<f64> = f_cols.iter().map(|&c| oracle.float(i, c)).collect::<Result<_>>()?;
        if potential_outcomes[o.treatment] != o.outcome {
            return Err(oracle.malformed(i, "factual outcome disagrees with sidecar"));
        }
        records.push(PatientRecord {
            id: o.id,
            features: o.features,
            treatment: o.treatment,
            factual_outcome: o.outcome,
            potential_outcomes,
            expected_outcomes,
        });
    }
    let arm_counts = count_arms(&records, m);
    Ok(Cohort { config, records, arm_counts })
}
