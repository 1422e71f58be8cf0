//! Scenario files: a `[scenario]` table describing the network and a `[run]`
//! table with sweep grids and command controls.

use std::path::{Path, PathBuf};

use cvqkd::channels::{DetectorParams, NetworkScenario, NoisePlacement};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Practical,
    Ideal,
    Experimental,
}

/// A scalar applied to every user or one value per user.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    One(f64),
    Many(Vec<f64>),
}

impl PerUser {
    fn expand(&self, key: &str, n: usize) -> Result<Vec<f64>, CliError> {
        match self {
            PerUser::One(v) => Ok(vec![*v; n]),
            PerUser::Many(v) if v.len() == n => Ok(v.clone()),
            PerUser::Many(v) => Err(CliError::config(format!(
                "scenario.{key} has {} entries for {n} users",
                v.len()
            ))),
        }
    }
}

/// Either an explicit list or an inclusive `start..=stop` range.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) {
                    return Err(CliError::config(format!(
                        "distance range needs step > 0 and stop >= start, got {start}..{stop} step {step}"
                    )));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| start + k as f64 * step).collect()
            }
        };
        check_increasing("run.distances_km", &v)?;
        Ok(v)
    }
}

fn check_increasing<T: PartialOrd + Copy + std::fmt::Debug>(key: &str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::config(format!("{key} is empty")));
    }
    if v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::config(format!("{key} must be strictly increasing: {v:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Option<Preset>,
    pub users: Option<usize>,
    pub modulation_variance: Option<f64>,
    pub feeder_km: Option<f64>,
    pub loss_db_per_km: Option<f64>,
    pub feeder_excess_noise: Option<f64>,
    pub beta: Option<f64>,
    pub ratios: Option<Vec<f64>>,
    pub drop_km: Option<PerUser>,
    pub drop_excess_noise: Option<PerUser>,
    pub efficiency: Option<PerUser>,
    pub electronic_noise: Option<PerUser>,
    /// Per-user excess noise referred to Alice's output; overrides the
    /// feeder and drop noise values.
    pub input_referred_noise: Option<PerUser>,
    pub noise_placement: Option<NoisePlacement>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub distances_km: Option<Grid>,
    pub users: Option<Vec<usize>>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub baud: Option<f64>,
    pub overhead: Option<f64>,
    /// Explicit key rates (bits/symbol) for `bps`; computed from the
    /// scenario when absent.
    pub rates: Option<Vec<f64>>,
    pub vm_bounds: Option<[f64; 2]>,
    /// `montecarlo` reconstructs from the exact outcome covariance instead
    /// of sampling.
    pub theory_shortcut: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunSection,
}

const EXPERIMENTAL_NOISE: [f64; 2] = [0.085, 0.103];

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario(None, None)?;
        if let Some(g) = &self.run.distances_km {
            g.values()?;
        }
        if let Some(users) = &self.run.users {
            check_increasing("run.users", users)?;
            for &n in users {
                self.scenario(Some(n), None)?;
            }
        }
        if let Some(0) = self.run.samples {
            return Err(CliError::config("run.samples must be > 0"));
        }
        if let Some([lo, hi]) = self.run.vm_bounds {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(CliError::config(format!("run.vm_bounds [{lo}, {hi}] invalid")));
            }
        }
        Ok(())
    }

    fn default_users(&self) -> usize {
        match self.scenario.preset {
            Some(Preset::Experimental) => 2,
            _ => 1,
        }
    }

    /// The configured scenario, optionally with a different user count or
    /// feeder length.
    pub fn scenario(&self, users: Option<usize>, feeder_km: Option<f64>) -> Result<NetworkScenario, CliError> {
        let s = &self.scenario;
        let n = users.or(s.users).unwrap_or_else(|| self.default_users());
        if n == 0 {
            return Err(CliError::config("scenario needs at least one user"));
        }
        let km = feeder_km.or(s.feeder_km);
        let placement = s.noise_placement.unwrap_or_default();
        let mut scn = match s.preset {
            Some(Preset::Practical) => NetworkScenario::practical(n, 0.0),
            Some(Preset::Ideal) => NetworkScenario::ideal(n, 0.0),
            Some(Preset::Experimental) => {
                if n != 2 {
                    return Err(CliError::config("the experimental preset has exactly 2 users"));
                }
                NetworkScenario::experimental(placement)
            }
            None => NetworkScenario::uniform(n, 4.0),
        };
        if let Some(km) = km {
            scn.feeder_km = km;
        }
        if let Some(v) = s.modulation_variance {
            scn.source_variance = v + 1.0;
        }
        if let Some(a) = s.loss_db_per_km {
            scn.loss_db_per_km = a;
        }
        if let Some(e) = s.feeder_excess_noise {
            scn.feeder_excess_noise = e;
        }
        if let Some(b) = s.beta {
            scn.beta = b;
        }
        if let Some(r) = &s.ratios {
            if r.len() != n {
                return Err(CliError::config(format!("scenario.ratios has {} entries for {n} users", r.len())));
            }
            scn.users.iter_mut().zip(r).for_each(|(u, &x)| u.ratio = x);
        }
        if let Some(v) = &s.drop_km {
            let v = v.expand("drop_km", n)?;
            scn.users.iter_mut().zip(v).for_each(|(u, x)| u.drop_km = x);
        }
        if let Some(v) = &s.drop_excess_noise {
            let v = v.expand("drop_excess_noise", n)?;
            scn.users.iter_mut().zip(v).for_each(|(u, x)| u.drop_excess_noise = x);
        }
        let eff = s.efficiency.as_ref().map(|v| v.expand("efficiency", n)).transpose()?;
        let ele = s.electronic_noise.as_ref().map(|v| v.expand("electronic_noise", n)).transpose()?;
        for (i, u) in scn.users.iter_mut().enumerate() {
            u.detector = DetectorParams {
                efficiency: eff.as_ref().map_or(u.detector.efficiency, |v| v[i]),
                electronic_noise: ele.as_ref().map_or(u.detector.electronic_noise, |v| v[i]),
            };
        }
        let totals = match (&s.input_referred_noise, s.preset) {
            (Some(v), _) => Some(v.expand("input_referred_noise", n)?),
            (None, Some(Preset::Experimental)) => Some(EXPERIMENTAL_NOISE.to_vec()),
            _ => None,
        };
        if let Some(t) = totals {
            scn.set_input_referred_noise(&t, placement)?;
        }
        scn.validate()?;
        Ok(scn)
    }

    pub fn distances(&self) -> Result<Option<Vec<f64>>, CliError> {
        self.run.distances_km.as_ref().map(Grid::values).transpose()
    }

    pub fn user_grid(&self) -> Vec<Option<usize>> {
        match &self.run.users {
            Some(v) => v.iter().map(|&n| Some(n)).collect(),
            None => vec![None],
        }
    }

    pub fn vm_bounds(&self) -> (f64, f64) {
        self.run.vm_bounds.map_or((0.5, 40.0), |[lo, hi]| (lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn practical_preset_with_overrides() {
        let cfg = ScenarioConfig::parse(
            "[scenario]\npreset = \"practical\"\nusers = 4\nfeeder_km = 25\nefficiency = [0.6, 0.6, 0.5, 0.6]\n",
        )
        .unwrap();
        let scn = cfg.scenario(None, None).unwrap();
        assert_eq!(scn.n_users(), 4);
        assert_eq!(scn.feeder_km, 25.0);
        assert_eq!(scn.users[2].detector.efficiency, 0.5);
        assert_eq!(scn.users[0].detector.electronic_noise, 0.1);
        assert!(cfg.scenario(Some(8), None).is_err());
        let cfg = ScenarioConfig::parse("[scenario]\npreset = \"practical\"\nefficiency = 0.5\n").unwrap();
        let scn = cfg.scenario(Some(8), Some(3.0)).unwrap();
        assert_eq!((scn.n_users(), scn.feeder_km), (8, 3.0));
        assert!(scn.users.iter().all(|u| u.detector.efficiency == 0.5 && u.ratio == 0.125));
    }

    #[test]
    fn experimental_preset_matches_library() {
        let cfg = ScenarioConfig::parse("[scenario]\npreset = \"experimental\"\n").unwrap();
        assert_eq!(cfg.scenario(None, None).unwrap(), NetworkScenario::experimental(NoisePlacement::Drop));
        let cfg = ScenarioConfig::parse("[scenario]\npreset = \"experimental\"\nnoise_placement = \"shared\"\n").unwrap();
        assert_eq!(cfg.scenario(None, None).unwrap(), NetworkScenario::experimental(NoisePlacement::Shared));
    }

    #[test]
    fn grids() {
        let g = Grid::Range { start: 0.0, stop: 100.0, step: 5.0 };
        let v = g.values().unwrap();
        assert_eq!(v.len(), 21);
        assert_eq!(v[20], 100.0);
        assert!(Grid::List(vec![]).values().is_err());
        assert!(Grid::List(vec![0.0, 5.0, 5.0]).values().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[scenario]\nusers = 0\n",
            "[scenario]\nusers = 3\nratios = [0.5, 0.5]\n",
            "[scenario]\nbeta = 1.5\n",
            "[scenario]\nunknown = 1\n",
            "[run]\nusers = [8, 4]\n",
            "[run]\ndistances_km = []\n",
            "[scenario]\npreset = \"experimental\"\nusers = 3\n",
            "[scenario]\nusers = 2\nefficiency = [0.5]\n",
            "not toml at all [",
        ] {
            assert!(ScenarioConfig::parse(text).is_err(), "{text}");
        }
    }
}
