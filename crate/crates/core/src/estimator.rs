//! Synthetic heterodyne records and the reconstruction of the network
//! covariance matrix (and key rates) from them.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{build_network_state, canonical_roles, detector_channel, DetectorParams, NetworkScenario};
use crate::error::{Error, Result};
use crate::gaussian::{physical_projection, select_roles, GaussianSystem, ModeRole};
use crate::keyrate::{key_rate_total, outcome_covariance, KeyRateReport, OutcomeCovariance};

const BLOCK_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub scenario: NetworkScenario,
    pub seed: u64,
    pub n_samples: usize,
    pub columns: Vec<String>,
}

/// One row per symbol: Alice's modulation `(a_x, a_p)` followed by each
/// user's heterodyne outcome `(b_x, b_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSamples {
    metadata: SampleMetadata,
    data: Vec<f64>,
}

pub fn column_names(n_users: usize) -> Vec<String> {
    let mut cols = vec!["a_x".to_string(), "a_p".to_string()];
    for i in 1..=n_users {
        cols.push(format!("b{i}_x"));
        cols.push(format!("b{i}_p"));
    }
    cols
}

impl QuadratureSamples {
    /// Wraps row-major `data`; its width must match `metadata.columns`.
    pub fn new(metadata: SampleMetadata, data: Vec<f64>) -> Result<Self> {
        let width = metadata.columns.len();
        if width < 4 || !width.is_multiple_of(2) {
            return Err(Error::invalid(format!("{width} columns do not form quadrature pairs")));
        }
        if metadata.columns != column_names(width / 2 - 1) {
            return Err(Error::invalid(format!(
                "unexpected column layout {:?}",
                metadata.columns
            )));
        }
        if data.is_empty() || !data.len().is_multiple_of(width) || data.len() / width != metadata.n_samples {
            return Err(Error::invalid(format!(
                "{} values do not form {} rows of {width}",
                data.len(),
                metadata.n_samples
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples contain non-finite values"));
        }
        Ok(QuadratureSamples { metadata, data })
    }

    pub fn metadata(&self) -> &SampleMetadata {
        &self.metadata
    }

    pub fn n_samples(&self) -> usize {
        self.metadata.n_samples
    }

    pub fn n_users(&self) -> usize {
        self.width() / 2 - 1
    }

    pub fn width(&self) -> usize {
        self.metadata.columns.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.width()).copied().collect()
    }

    /// Empirical second moments `XᵀX / M` (the mean is known to be zero).
    pub fn second_moments(&self) -> DMatrix<f64> {
        let w = self.width();
        // Per-block partial sums are added in block order so the result does
        // not depend on scheduling.
        let partial: Vec<DMatrix<f64>> = self
            .data
            .par_chunks(w * BLOCK_ROWS)
            .map(|chunk| {
                let mut m = DMatrix::<f64>::zeros(w, w);
                for row in chunk.chunks_exact(w) {
                    for i in 0..w {
                        for j in i..w {
                            m[(i, j)] += row[i] * row[j];
                        }
                    }
                }
                m
            })
            .collect();
        let acc = partial.into_iter().fold(DMatrix::zeros(w, w), |a, b| a + b);
        let mut m = acc / self.n_samples() as f64;
        m.fill_lower_triangle_with_upper_triangle();
        m
    }

    /// Writes the rows as CSV with a header line, plus a JSON sidecar
    /// holding the metadata at [`sidecar_path`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(&self.metadata.columns)?;
        for row in self.data.chunks_exact(self.width()) {
            w.serialize(row)?;
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), &self.metadata)?;
        Ok(())
    }

    /// Reads a file written by [`QuadratureSamples::write_csv`] together
    /// with its sidecar.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let metadata: SampleMetadata =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != metadata.columns {
            return Err(Error::invalid("CSV header does not match its metadata"));
        }
        let mut data = Vec::with_capacity(metadata.n_samples * header.len());
        for rec in r.deserialize::<Vec<f64>>() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::invalid("ragged CSV row"));
            }
            data.extend(rec);
        }
        QuadratureSamples::new(metadata, data)
    }
}

/// `samples.csv` → `samples.csv.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Factor relating Alice's heterodyne outcome `a` on her EPR arm to the
/// equivalent prepare-and-measure modulation `a' = k a`,
/// `k = √(2(V-1)/(V+1))`.
pub fn source_replacement_scale(source_variance: f64) -> Result<f64> {
    if !(source_variance > 1.0) || !source_variance.is_finite() {
        return Err(Error::invalid(format!(
            "source variance {source_variance} must exceed 1"
        )));
    }
    Ok((2.0 * (source_variance - 1.0) / (source_variance + 1.0)).sqrt())
}

/// Modulation data `a'` to equivalent heterodyne outcomes `a`.
pub fn source_replacement(modulation: &[f64], source_variance: f64) -> Result<Vec<f64>> {
    let k = source_replacement_scale(source_variance)?;
    Ok(modulation.iter().map(|v| v / k).collect())
}

/// Heterodyne outcomes `a` to modulation data `a'`.
pub fn inverse_source_replacement(outcomes: &[f64], source_variance: f64) -> Result<Vec<f64>> {
    let k = source_replacement_scale(source_variance)?;
    Ok(outcomes.iter().map(|v| v * k).collect())
}

/// Draws `n_samples` symbols from the outcome distribution of `scn`.
///
/// Rows are produced in blocks, each with its own ChaCha stream derived from
/// `seed`, so the result is independent of the thread count.
pub fn sample_outcomes(scn: &NetworkScenario, n_samples: usize, seed: u64) -> Result<QuadratureSamples> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let sys = build_network_state(scn)?;
    let measured: Vec<ModeRole> = canonical_roles(scn.n_users())[..scn.n_users() + 1].to_vec();
    let sigma = outcome_covariance(&sys, &measured)?;
    let chol = sigma.sigma().clone().cholesky().ok_or_else(|| {
        Error::NumericDegeneracy("outcome covariance is not positive definite".into())
    })?;
    let l = chol.l();
    let k = source_replacement_scale(scn.source_variance)?;
    let w = sigma.sigma().nrows();

    let mut data = vec![0.0; n_samples * w];
    data.par_chunks_mut(w * BLOCK_ROWS)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let mut z = vec![0.0; w];
            for row in chunk.chunks_exact_mut(w) {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                for i in 0..w {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[(i, j)] * z[j];
                    }
                    row[i] = acc;
                }
                row[0] *= k;
                row[1] *= k;
            }
        });

    let metadata = SampleMetadata {
        scenario: scn.clone(),
        seed,
        n_samples,
        columns: column_names(scn.n_users()),
    };
    QuadratureSamples::new(metadata, data)
}

/// Network covariance matrix reconstructed from measurement statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Full state, modes `alice, bob1..bobN, det1..detN`.
    pub system: GaussianSystem,
    /// Whether `system` satisfies the uncertainty principle. Finite-sample
    /// noise can push a near-boundary estimate outside it.
    pub physical: bool,
    /// Alice and the users' modes before their detectors.
    pub pre_detector: GaussianSystem,
    /// One standard error per entry of `pre_detector`, when estimated from
    /// samples.
    pub standard_errors: Option<DMatrix<f64>>,
}

impl CovarianceEstimate {
    /// The state key rates are evaluated on: the estimate itself, or its
    /// physical projection when it is flagged unphysical.
    pub fn rate_state(&self) -> Result<GaussianSystem> {
        if self.physical {
            Ok(self.system.clone())
        } else {
            physical_projection(&self.system)
        }
    }
}

fn check_detectors(n_users: usize, dets: &[DetectorParams]) -> Result<()> {
    if dets.len() != n_users {
        return Err(Error::invalid(format!(
            "{} detectors for {n_users} users",
            dets.len()
        )));
    }
    dets.iter().try_for_each(DetectorParams::validate)
}

/// Reconstructs the network state from the outcome covariance of
/// `alice, bob1..bobN` (equivalent entanglement-based units).
///
/// `γ = 2Σ - I`; each Bob's detector is then undone
/// (`V_B = (V_B' - (1 - η_D)) / η_D`, correlations `÷ √η_D`) and re-applied
/// as a beam splitter so the trusted ancillas appear in the state.
pub fn estimate_from_outcome_covariance(sigma: &OutcomeCovariance, dets: &[DetectorParams]) -> Result<CovarianceEstimate> {
    let n = dets.len();
    if sigma.modes() != &canonical_roles(n)[..n + 1] {
        return Err(Error::invalid("outcome covariance must cover alice, bob1..bobN in order"));
    }
    check_detectors(n, dets)?;
    let w = 2 * (n + 1);
    let mut gamma = sigma.sigma() * 2.0 - DMatrix::identity(w, w);
    let factors: Vec<f64> = std::iter::once(1.0)
        .chain(dets.iter().map(|d| 1.0 / d.effective_transmittance().sqrt()))
        .flat_map(|f| [f, f])
        .collect();
    for i in 0..w {
        for j in 0..w {
            gamma[(i, j)] *= factors[i] * factors[j];
        }
    }
    for (u, d) in dets.iter().enumerate() {
        let eta = d.effective_transmittance();
        for q in [2 * (u + 1), 2 * (u + 1) + 1] {
            gamma[(q, q)] -= (1.0 - eta) / eta;
        }
    }
    let pre = GaussianSystem::new(gamma, sigma.modes().to_vec())?;
    let mut full = pre.clone();
    for (u, d) in dets.iter().enumerate() {
        let m = full.require(ModeRole::Bob(u))?;
        full = detector_channel(&full, m, d)?;
    }
    let system = select_roles(&full, &canonical_roles(n))?;
    Ok(CovarianceEstimate {
        physical: system.is_physical(),
        system,
        pre_detector: pre,
        standard_errors: None,
    })
}

/// Reconstructs the network state from sampled records. `source_variance`
/// is Alice's calibrated `V`, used to undo the source replacement.
pub fn estimate_covariance(samples: &QuadratureSamples, dets: &[DetectorParams], source_variance: f64) -> Result<CovarianceEstimate> {
    let n = samples.n_users();
    check_detectors(n, dets)?;
    let k = source_replacement_scale(source_variance)?;
    let raw = samples.second_moments();
    let w = raw.nrows();
    let unit: Vec<f64> = (0..w).map(|q| if q < 2 { 1.0 / k } else { 1.0 }).collect();
    let mut sigma = raw.clone();
    for i in 0..w {
        for j in 0..w {
            sigma[(i, j)] *= unit[i] * unit[j];
        }
    }
    let measured = canonical_roles(n)[..n + 1].to_vec();
    let mut est = estimate_from_outcome_covariance(&OutcomeCovariance::new(sigma, measured)?, dets)?;

    // Var of a second-moment estimate: (Σii Σjj + Σij²) / M, then the
    // same linear maps as the reconstruction.
    let m = samples.n_samples() as f64;
    let det_f: Vec<f64> = std::iter::once(1.0)
        .chain(dets.iter().map(|d| 1.0 / d.effective_transmittance().sqrt()))
        .flat_map(|f| [f, f])
        .collect();
    let se = DMatrix::from_fn(w, w, |i, j| {
        let var = (raw[(i, i)] * raw[(j, j)] + raw[(i, j)].powi(2)) / m;
        2.0 * unit[i] * unit[j] * det_f[i] * det_f[j] * var.sqrt()
    });
    est.standard_errors = Some(se);
    Ok(est)
}

/// Key rates computed from the reconstructed covariance matrix. An estimate
/// that finite-sample noise pushed past the uncertainty principle is first
/// replaced by its [`physical_projection`].
pub fn keyrate_from_samples(samples: &QuadratureSamples, dets: &[DetectorParams], source_variance: f64, beta: f64) -> Result<KeyRateReport> {
    let est = estimate_covariance(samples, dets, source_variance)?;
    key_rate_total(&est.rate_state()?, beta)
}
