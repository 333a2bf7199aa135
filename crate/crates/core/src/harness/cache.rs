use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::simgen::{
    calibrate_with, CalibrationSettings, CopulaSpec, ExposureMixture, OutcomeModel, ScenarioSpec,
    SimError,
};

/// Everything the calibrated latent correlation depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheKey {
    r_x: f64,
    k_x: f64,
    rate: f64,
    k: f64,
    rho: f64,
    exposure: ExposureMixture,
    settings: CalibrationSettings,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    latent_rho: f64,
}

/// On-disk store of calibrated latent correlations keyed by a SHA-256 of the
/// inputs that determine them.
#[derive(Debug, Clone)]
pub struct CalibrationCache {
    dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibrated {
    pub latent_rho: f64,
    pub cache_hit: bool,
}

impl CalibrationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn key(spec: &ScenarioSpec, settings: &CalibrationSettings) -> Option<CacheKey> {
        let OutcomeModel::Copula(CopulaSpec {
            r_x,
            k_x,
            rates,
            dispersions,
            rho,
        }) = &spec.outcome
        else {
            return None;
        };
        Some(CacheKey {
            r_x: *r_x,
            k_x: *k_x,
            rate: rates[0],
            k: dispersions[0],
            rho: *rho,
            exposure: spec.exposure.clone(),
            settings: *settings,
        })
    }

    /// File that holds (or would hold) the calibration for `spec`.
    pub fn path_for(&self, spec: &ScenarioSpec, settings: &CalibrationSettings) -> Option<PathBuf> {
        let key = Self::key(spec, settings)?;
        let bytes = serde_json::to_vec(&key).ok()?;
        let digest = hex::encode(Sha256::digest(&bytes));
        Some(self.dir.join(format!("{digest}.json")))
    }

    /// Cached value if present and matching, else calibrates and stores it.
    /// Write failures are returned after the value has been computed.
    pub fn get_or_calibrate(
        &self,
        spec: &ScenarioSpec,
        settings: &CalibrationSettings,
    ) -> Result<(Calibrated, Option<io::Error>), SimError> {
        let Some(path) = self.path_for(spec, settings) else {
            return Ok((
                Calibrated {
                    latent_rho: 0.0,
                    cache_hit: false,
                },
                None,
            ));
        };
        let key = Self::key(spec, settings).expect("copula spec");
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
                if entry.key == key {
                    return Ok((
                        Calibrated {
                            latent_rho: entry.latent_rho,
                            cache_hit: true,
                        },
                        None,
                    ));
                }
            }
        }
        let latent_rho = calibrate_with(spec, settings)?;
        let entry = CacheEntry { key, latent_rho };
        let write = fs::create_dir_all(&self.dir).and_then(|_| {
            let json = serde_json::to_string_pretty(&entry).map_err(io::Error::other)?;
            fs::write(&path, json)
        });
        Ok((
            Calibrated {
                latent_rho,
                cache_hit: false,
            },
            write.err(),
        ))
    }
}
