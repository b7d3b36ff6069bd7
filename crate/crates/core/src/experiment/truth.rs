//! Synthetic ground truth and the data file that carries it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldRole};
use crate::forward::{observe, sensor_lattice, EllipticProblem, ObservationModel};
use crate::random_field::{global_kle, CovarianceParams};

use super::config::ExperimentConfig;

pub const DATA_FORMAT: &str = "msm-data";
pub const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthData {
    pub format: String,
    pub version: u32,
    pub grid_n: usize,
    pub prior: CovarianceParams,
    pub modes: usize,
    pub seed: u64,
    pub eta_true: Vec<f64>,
    pub sensors: Vec<[f64; 2]>,
    /// Noiseless sensor pressures.
    pub p_clean: Vec<f64>,
    pub p_data: Vec<f64>,
    pub noise_variance: f64,
}

impl TruthData {
    pub fn observation_model(&self) -> Result<ObservationModel> {
        ObservationModel::new(
            self.sensors.clone(),
            self.p_data.clone(),
            self.noise_variance,
        )
    }

    pub fn eta_field(&self) -> Field {
        Field::new(FieldRole::LogPermeability, self.eta_true.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let data: TruthData = serde_json::from_str(&text)?;
        if data.format != DATA_FORMAT || data.version != DATA_VERSION {
            return Err(Error::Format(format!(
                "unsupported data file {} v{} in {}",
                data.format,
                data.version,
                path.display()
            )));
        }
        if data.eta_true.len() != data.grid_n * data.grid_n
            || data.sensors.len() != data.p_data.len()
        {
            return Err(Error::Format(format!(
                "inconsistent array lengths in {}",
                path.display()
            )));
        }
        Ok(data)
    }
}

/// Draw η from a global expansion, solve on the fine grid and add `N(0, σ_ε²)` noise.
pub fn generate_truth(cfg: &ExperimentConfig) -> Result<TruthData> {
    let grid = cfg.grid()?;
    let prior = cfg.covariance()?;
    let basis = global_kle(grid, &prior, cfg.truth.modes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.truth.seed);
    let theta: Vec<f64> = (0..cfg.truth.modes)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let eta = Field::new(FieldRole::LogPermeability, basis.expand(&theta));
    let p = EllipticProblem::new(grid).solve(&eta.exp())?;
    let sensors = sensor_lattice(cfg.observations.sensors);
    let p_clean = observe(&p, grid, &sensors)?;
    let sd = cfg.observations.noise_variance.sqrt();
    let p_data = p_clean
        .iter()
        .map(|v| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            v + sd * xi
        })
        .collect();
    Ok(TruthData {
        format: DATA_FORMAT.into(),
        version: DATA_VERSION,
        grid_n: grid.n(),
        prior,
        modes: cfg.truth.modes,
        seed: cfg.truth.seed,
        eta_true: eta.values,
        sensors,
        p_clean,
        p_data,
        noise_variance: cfg.observations.noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_reproduces_clean_data() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.n = 8;
        cfg.truth.modes = 16;
        cfg.observations.noise_variance = 0.0;
        let t = generate_truth(&cfg).unwrap();
        assert_eq!(t.p_clean, t.p_data);
        assert!(t.p_clean.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(generate_truth(&cfg).unwrap(), t);
    }

    #[test]
    fn file_round_trip_and_version_check() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.n = 8;
        cfg.truth.modes = 16;
        let t = generate_truth(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        t.write(&path).unwrap();
        assert_eq!(TruthData::read(&path).unwrap(), t);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(TruthData::read(&path), Err(Error::Format(_))));
    }
}
