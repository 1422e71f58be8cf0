//! Fiber, broadcast, detector and equivalent-channel models, and the
//! 1-to-N network description they are assembled from.
//!
//! Excess noise is always referenced to the input of the channel it belongs
//! to: a channel `(T, ε)` adds `T ε` to the output variance on top of the
//! vacuum noise `1 - T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    beam_splitter, check_unit_interval, epr_state, select_roles, GaussianSystem, ModeRole,
};

const RATIO_SUM_TOL: f64 = 1e-9;

/// A single-mode phase-insensitive Gaussian channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub transmittance: f64,
    /// SNU, referenced to the channel input.
    pub excess_noise: f64,
}

impl ChannelParams {
    pub fn new(transmittance: f64, excess_noise: f64) -> Result<Self> {
        let ch = ChannelParams {
            transmittance,
            excess_noise,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn identity() -> Self {
        ChannelParams {
            transmittance: 1.0,
            excess_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return Err(Error::invalid(format!(
                "transmittance {} outside (0, 1]",
                self.transmittance
            )));
        }
        if !(self.excess_noise >= 0.0) || !self.excess_noise.is_finite() {
            return Err(Error::invalid(format!(
                "excess noise {} must be finite and >= 0",
                self.excess_noise
            )));
        }
        Ok(())
    }

    /// `self` followed by `next`, as one channel: transmittance `T1 T2`,
    /// input-referred noise `ε1 + ε2 / T1`.
    pub fn then(&self, next: &ChannelParams) -> ChannelParams {
        ChannelParams {
            transmittance: self.transmittance * next.transmittance,
            excess_noise: self.excess_noise + next.excess_noise / self.transmittance,
        }
    }

    /// Variance added on top of the attenuated input, `1 - T + T ε`.
    pub fn added_noise(&self) -> f64 {
        1.0 - self.transmittance + self.transmittance * self.excess_noise
    }
}

/// Imperfect heterodyne detector. Under one-time shot-noise calibration it is
/// equivalent to a trusted beam splitter of transmittance
/// `η_D = η_d / (1 + ν_ele)` with a vacuum ancilla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// SNU.
    pub electronic_noise: f64,
}

impl DetectorParams {
    pub fn new(efficiency: f64, electronic_noise: f64) -> Result<Self> {
        let d = DetectorParams {
            efficiency,
            electronic_noise,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn ideal() -> Self {
        DetectorParams {
            efficiency: 1.0,
            electronic_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "detector efficiency {} outside (0, 1]",
                self.efficiency
            )));
        }
        if !(self.electronic_noise >= 0.0) || !self.electronic_noise.is_finite() {
            return Err(Error::invalid(format!(
                "electronic noise {} must be finite and >= 0",
                self.electronic_noise
            )));
        }
        Ok(())
    }

    pub fn effective_transmittance(&self) -> f64 {
        self.efficiency / (1.0 + self.electronic_noise)
    }
}

/// Power transmittance of `length_km` of fiber with `alpha_db_per_km` loss.
pub fn fiber_transmittance(length_km: f64, alpha_db_per_km: f64) -> Result<f64> {
    if !(length_km >= 0.0) || !(alpha_db_per_km >= 0.0) {
        return Err(Error::invalid(format!(
            "fiber length {length_km} km and loss {alpha_db_per_km} dB/km must be >= 0"
        )));
    }
    Ok(10f64.powf(-alpha_db_per_km * length_km / 10.0))
}

/// Fiber length that produces `transmittance` at `alpha_db_per_km`.
pub fn fiber_length_for(transmittance: f64, alpha_db_per_km: f64) -> Result<f64> {
    if !(transmittance > 0.0 && transmittance <= 1.0) {
        return Err(Error::invalid(format!(
            "transmittance {transmittance} outside (0, 1]"
        )));
    }
    if transmittance == 1.0 {
        return Ok(0.0);
    }
    if !(alpha_db_per_km > 0.0) {
        return Err(Error::invalid(
            "lossy link cannot be expressed as fiber with zero attenuation",
        ));
    }
    Ok(-10.0 * transmittance.log10() / alpha_db_per_km)
}

/// Sends mode `m` through a thermal-loss channel: its variance maps
/// `V ↦ T (V + ε) + 1 - T` and every correlation involving it scales by `√T`.
pub fn thermal_loss_channel(sys: &GaussianSystem, m: usize, ch: &ChannelParams) -> Result<GaussianSystem> {
    ch.validate()?;
    if m >= sys.n_modes() {
        return Err(Error::invalid(format!("mode {m} out of range")));
    }
    let mut cm = sys.cm().clone();
    let sqrt_t = ch.transmittance.sqrt();
    for q in [2 * m, 2 * m + 1] {
        cm.row_mut(q).scale_mut(sqrt_t);
        cm.column_mut(q).scale_mut(sqrt_t);
    }
    let added = ch.added_noise();
    cm[(2 * m, 2 * m)] += added;
    cm[(2 * m + 1, 2 * m + 1)] += added;
    GaussianSystem::new(cm, sys.roles().to_vec())
}

pub fn uniform_ratios(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(Error::invalid("broadcast needs at least one output"));
    }
    if ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(Error::invalid("splitter ratios must lie in (0, 1]"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > RATIO_SUM_TOL {
        return Err(Error::invalid(format!(
            "splitter ratios sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Splits mode `m` into `ratios.len()` outputs with a chain of beam
/// splitters, output `k` receiving power fraction `ratios[k]`.
///
/// Output `k < N-1` is a freshly appended mode tapped off the carrier; the
/// carrier itself (mode `m`) becomes the last output. Outputs are labelled
/// `Bob(0..N)`. For uniform ratios the chain uses `η_k = 1 - 1/(N-k)`
/// (zero-based `k`).
pub fn broadcast(sys: &GaussianSystem, m: usize, ratios: &[f64]) -> Result<GaussianSystem> {
    check_ratios(ratios)?;
    if m >= sys.n_modes() {
        return Err(Error::invalid(format!("mode {m} out of range")));
    }
    let n = ratios.len();
    let mut cur = sys.clone();
    let mut remaining = 1.0;
    for (k, &r) in ratios[..n - 1].iter().enumerate() {
        cur = cur.append_vacuum(ModeRole::Bob(k))?;
        let tap = cur.n_modes() - 1;
        let eta = (1.0 - r / remaining).clamp(0.0, 1.0);
        remaining -= r;
        cur = beam_splitter(&cur, tap, m, eta)?;
    }
    cur.with_role(m, ModeRole::Bob(n - 1))
}

/// Models the imperfect detector of a Bob as a trusted beam splitter with
/// transmittance `η_D` against a vacuum ancilla. The ancilla output is kept
/// as `Detector(i)`.
pub fn detector_channel(sys: &GaussianSystem, m: usize, det: &DetectorParams) -> Result<GaussianSystem> {
    det.validate()?;
    if m >= sys.n_modes() {
        return Err(Error::invalid(format!("mode {m} out of range")));
    }
    let user = match sys.role(m) {
        ModeRole::Bob(i) => i,
        other => {
            return Err(Error::invalid(format!(
                "detector must act on a Bob mode, got {other}"
            )))
        }
    };
    let with_anc = sys.append_vacuum(ModeRole::Detector(user))?;
    let anc = with_anc.n_modes() - 1;
    beam_splitter(&with_anc, m, anc, det.effective_transmittance())
}

/// Merges two drop channels fed by a splitter of ratio `eta : 1 - eta` into
/// one equivalent channel: `T = η T_a + (1-η) T_b` and
/// `ε = (η T_a² ε_a + (1-η) T_b² ε_b) / T²`.
pub fn equivalent_channel_reduction(eta: f64, a: &ChannelParams, b: &ChannelParams) -> Result<ChannelParams> {
    check_unit_interval("splitter ratio", eta)?;
    a.validate()?;
    b.validate()?;
    let t = eta * a.transmittance + (1.0 - eta) * b.transmittance;
    if !(t > 0.0) {
        return Err(Error::invalid("equivalent transmittance is zero"));
    }
    let eps = (eta * a.transmittance.powi(2) * a.excess_noise
        + (1.0 - eta) * b.transmittance.powi(2) * b.excess_noise)
        / (t * t);
    Ok(ChannelParams {
        transmittance: t,
        excess_noise: eps,
    })
}

/// One receiver of the network: its share of the splitter, its drop fiber
/// and its detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserLink {
    pub ratio: f64,
    pub drop_km: f64,
    /// SNU, referenced to the drop fiber input.
    pub drop_excess_noise: f64,
    pub detector: DetectorParams,
}

/// Where per-user excess noise quoted at Alice's output is placed in the
/// network model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoisePlacement {
    /// Each user's full noise sits at the input of that user's drop fiber.
    #[default]
    Drop,
    /// The smallest per-user value sits on the shared feeder, the remainder
    /// on the drops.
    Shared,
}

/// A 1-to-N deployment: Alice's EPR source, a feeder fiber, a passive
/// splitter and one drop fiber plus detector per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    /// `V = V_M + 1`, SNU.
    pub source_variance: f64,
    pub feeder_km: f64,
    pub loss_db_per_km: f64,
    /// SNU, referenced to the feeder input.
    pub feeder_excess_noise: f64,
    pub users: Vec<UserLink>,
    /// Reconciliation efficiency.
    pub beta: f64,
}

impl NetworkScenario {
    /// `n` users on a uniform splitter, lossless noiseless links, ideal
    /// detectors, `β = 1`, 0.2 dB/km fiber.
    pub fn uniform(n: usize, modulation_variance: f64) -> Self {
        let link = UserLink {
            ratio: 1.0 / n.max(1) as f64,
            drop_km: 0.0,
            drop_excess_noise: 0.0,
            detector: DetectorParams::ideal(),
        };
        NetworkScenario {
            source_variance: modulation_variance + 1.0,
            feeder_km: 0.0,
            loss_db_per_km: 0.2,
            feeder_excess_noise: 0.0,
            users: vec![link; n],
            beta: 1.0,
        }
    }

    /// Realistic parameter set: `β = 0.956`, `V_M = 4`, `ε = 0.05`,
    /// `η = 0.6`, `ν_ele = 0.1`, 0.2 dB/km.
    pub fn practical(n: usize, feeder_km: f64) -> Self {
        let mut s = NetworkScenario::uniform(n, 4.0);
        s.feeder_km = feeder_km;
        s.feeder_excess_noise = 0.05;
        s.beta = 0.956;
        for u in &mut s.users {
            u.detector = DetectorParams {
                efficiency: 0.6,
                electronic_noise: 0.1,
            };
        }
        s
    }

    /// Asymptotic limit: `β = 1`, `V_M = 10⁴`, pure loss, ideal detectors.
    pub fn ideal(n: usize, feeder_km: f64) -> Self {
        let mut s = NetworkScenario::uniform(n, 1e4);
        s.feeder_km = feeder_km;
        s
    }

    /// The three-node testbed: 25 km feeder, 1:2 splitter, two 5 km drops,
    /// `η_d = 0.502 / 0.485`, excess noise `0.085 / 0.103` SNU at Alice's
    /// output, `β = 0.96`, `V_M = 4.3`. Electronic noise is taken as folded
    /// into the quoted efficiencies.
    pub fn experimental(placement: NoisePlacement) -> Self {
        let mut s = NetworkScenario::uniform(2, 4.3);
        s.feeder_km = 25.0;
        s.beta = 0.96;
        for (u, eff) in s.users.iter_mut().zip([0.502, 0.485]) {
            u.drop_km = 5.0;
            u.detector = DetectorParams {
                efficiency: eff,
                electronic_noise: 0.0,
            };
        }
        s.set_input_referred_noise(&[0.085, 0.103], placement)
            .expect("preset is valid");
        s
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn modulation_variance(&self) -> f64 {
        self.source_variance - 1.0
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.ratio).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("scenario needs at least one user"));
        }
        if !(self.source_variance >= 1.0) || !self.source_variance.is_finite() {
            return Err(Error::invalid(format!(
                "source variance {} must be finite and >= 1",
                self.source_variance
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!(
                "reconciliation efficiency {} outside (0, 1]",
                self.beta
            )));
        }
        self.feeder_channel()?;
        check_ratios(&self.ratios())?;
        for i in 0..self.n_users() {
            self.drop_channel(i)?;
            self.users[i].detector.validate()?;
        }
        Ok(())
    }

    pub fn feeder_channel(&self) -> Result<ChannelParams> {
        ChannelParams::new(
            fiber_transmittance(self.feeder_km, self.loss_db_per_km)?,
            self.feeder_excess_noise,
        )
    }

    pub fn drop_channel(&self, user: usize) -> Result<ChannelParams> {
        let u = self
            .users
            .get(user)
            .ok_or_else(|| Error::invalid(format!("no user {user}")))?;
        ChannelParams::new(
            fiber_transmittance(u.drop_km, self.loss_db_per_km)?,
            u.drop_excess_noise,
        )
    }

    /// Everything between Alice and the detector of `user`, as one channel
    /// (feeder, splitter share, drop).
    pub fn end_to_end_channel(&self, user: usize) -> Result<ChannelParams> {
        let split = ChannelParams::new(self.users[user].ratio, 0.0)?;
        Ok(self
            .feeder_channel()?
            .then(&split)
            .then(&self.drop_channel(user)?))
    }

    /// Sets feeder and drop noise so that user `i` sees `totals[i]` SNU of
    /// excess noise referred to Alice's output.
    pub fn set_input_referred_noise(&mut self, totals: &[f64], placement: NoisePlacement) -> Result<()> {
        if totals.len() != self.n_users() {
            return Err(Error::invalid(format!(
                "{} noise values for {} users",
                totals.len(),
                self.n_users()
            )));
        }
        if totals.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::invalid("excess noise must be >= 0"));
        }
        let shared = match placement {
            NoisePlacement::Drop => 0.0,
            NoisePlacement::Shared => totals.iter().copied().fold(f64::INFINITY, f64::min),
        };
        let t_feed = fiber_transmittance(self.feeder_km, self.loss_db_per_km)?;
        self.feeder_excess_noise = shared;
        for (u, total) in self.users.iter_mut().zip(totals) {
            u.drop_excess_noise = (total - shared) * t_feed * u.ratio;
        }
        Ok(())
    }
}

/// Folds every user except `user` into a single equivalent receiver by
/// repeated [`equivalent_channel_reduction`], leaving a 1-to-2 scenario.
///
/// Returns the reduced scenario and the index of `user` in it. The folded
/// users must share a detector. The key rate of `user` is preserved exactly
/// when the folded drops are identical; otherwise the merged drop is the
/// equivalent-channel approximation.
pub fn reduce_to_two_user(scn: &NetworkScenario, user: usize) -> Result<(NetworkScenario, usize)> {
    scn.validate()?;
    let n = scn.n_users();
    if user >= n {
        return Err(Error::invalid(format!("no user {user} in a {n}-user scenario")));
    }
    if n <= 2 {
        return Ok((scn.clone(), user));
    }
    let others: Vec<usize> = (0..n).filter(|&k| k != user).collect();
    let det = scn.users[others[0]].detector;
    if others
        .iter()
        .any(|&k| (scn.users[k].detector.effective_transmittance() - det.effective_transmittance()).abs() > 1e-12)
    {
        return Err(Error::UnsupportedReduction(
            "folded users have different detectors".into(),
        ));
    }
    let mut ratio = scn.users[others[0]].ratio;
    let mut ch = scn.drop_channel(others[0])?;
    for &k in &others[1..] {
        let r = scn.users[k].ratio;
        ch = equivalent_channel_reduction(ratio / (ratio + r), &ch, &scn.drop_channel(k)?)?;
        ratio += r;
    }
    let merged = UserLink {
        ratio,
        drop_km: fiber_length_for(ch.transmittance, scn.loss_db_per_km)?,
        drop_excess_noise: ch.excess_noise,
        detector: det,
    };
    let kept = scn.users[user];
    let (users, idx) = if user < others[0] {
        (vec![kept, merged], 0)
    } else {
        (vec![merged, kept], 1)
    };
    Ok((
        NetworkScenario {
            users,
            ..scn.clone()
        },
        idx,
    ))
}

/// Builds the full network state: EPR source, feeder, broadcast, drops,
/// detectors. Modes are ordered `alice, bob1..bobN, det1..detN`.
pub fn build_network_state(scn: &NetworkScenario) -> Result<GaussianSystem> {
    scn.validate()?;
    let n = scn.n_users();
    let mut sys = epr_state(scn.source_variance)?;
    sys = thermal_loss_channel(&sys, 1, &scn.feeder_channel()?)?;
    sys = broadcast(&sys, 1, &scn.ratios())?;
    for i in 0..n {
        let m = sys.require(ModeRole::Bob(i))?;
        sys = thermal_loss_channel(&sys, m, &scn.drop_channel(i)?)?;
    }
    for i in 0..n {
        let m = sys.require(ModeRole::Bob(i))?;
        sys = detector_channel(&sys, m, &scn.users[i].detector)?;
    }
    select_roles(&sys, &canonical_roles(n))
}

/// `alice, bob1..bobN, det1..detN`.
pub fn canonical_roles(n_users: usize) -> Vec<ModeRole> {
    std::iter::once(ModeRole::Alice)
        .chain((0..n_users).map(ModeRole::Bob))
        .chain((0..n_users).map(ModeRole::Detector))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{partial_trace, symplectic_eigenvalues, vacuum_state};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn fiber_examples() {
        assert_eq!(fiber_transmittance(0.0, 0.2).unwrap(), 1.0);
        assert_relative_eq!(fiber_transmittance(50.0, 0.2).unwrap(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(fiber_transmittance(25.0, 0.2).unwrap(), 0.316_227_766_016_837_94, epsilon = 1e-15);
        assert!(fiber_transmittance(-1.0, 0.2).is_err());
        assert!(fiber_transmittance(1.0, -0.2).is_err());
        assert_relative_eq!(fiber_length_for(0.1, 0.2).unwrap(), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn thermal_loss_examples() {
        let epr = epr_state(5.0).unwrap();
        assert_eq!(thermal_loss_channel(&epr, 1, &ChannelParams::identity()).unwrap(), epr);

        let vac = vacuum_state(1).unwrap();
        let out = thermal_loss_channel(&vac, 0, &ChannelParams::new(0.3, 0.2).unwrap()).unwrap();
        assert_relative_eq!(out.cm()[(0, 0)], 1.0 + 0.3 * 0.2, epsilon = 1e-15);

        let (v, t) = (5.0, 0.4);
        let out = thermal_loss_channel(&epr, 1, &ChannelParams::new(t, 0.0).unwrap()).unwrap();
        assert_relative_eq!(out.cm()[(2, 2)], t * v + 1.0 - t, epsilon = 1e-14);
        assert_relative_eq!(out.cm()[(0, 2)], t.sqrt() * (v * v - 1.0).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(out.cm()[(0, 0)], v, epsilon = 0.0);
    }

    #[test]
    fn channel_param_validation() {
        assert!(ChannelParams::new(0.0, 0.0).is_err());
        assert!(ChannelParams::new(1.1, 0.0).is_err());
        assert!(ChannelParams::new(0.5, -0.1).is_err());
        assert!(DetectorParams::new(0.0, 0.0).is_err());
        assert!(DetectorParams::new(0.6, -0.1).is_err());
    }

    #[test]
    fn broadcast_examples() {
        let epr = epr_state(4.0).unwrap();
        let one = broadcast(&epr, 1, &[1.0]).unwrap();
        assert_eq!(one.cm(), epr.cm());
        assert_eq!(one.role(1), ModeRole::Bob(0));

        // V_B0 = 5, N = 4: V_Bi = 2, C_BiBj = 1.
        let thermal = GaussianSystem::new(DMatrix::identity(2, 2) * 5.0, vec![ModeRole::Aux]).unwrap();
        let out = broadcast(&thermal, 0, &uniform_ratios(4)).unwrap();
        for i in 0..4 {
            let mi = out.require(ModeRole::Bob(i)).unwrap();
            assert_relative_eq!(out.cm()[(2 * mi, 2 * mi)], 2.0, epsilon = 1e-12);
            for j in (i + 1)..4 {
                let mj = out.require(ModeRole::Bob(j)).unwrap();
                assert_relative_eq!(out.cm()[(2 * mi, 2 * mj)], 1.0, epsilon = 1e-12);
                assert_relative_eq!(out.cm()[(2 * mi + 1, 2 * mj + 1)], 1.0, epsilon = 1e-12);
            }
        }

        let v = 3.0;
        let out = broadcast(&epr_state(v).unwrap(), 1, &uniform_ratios(2)).unwrap();
        for i in 0..2 {
            let m = out.require(ModeRole::Bob(i)).unwrap();
            assert_relative_eq!(out.cm()[(0, 2 * m)], (0.5f64).sqrt() * (v * v - 1.0).sqrt(), epsilon = 1e-12);
        }

        assert!(broadcast(&epr, 1, &[0.5, 0.4]).is_err());
        assert!(broadcast(&epr, 1, &[]).is_err());
    }

    #[test]
    fn broadcast_general_ratios() {
        let v = 6.0;
        let ratios = [0.5, 0.2, 0.3];
        let out = broadcast(&epr_state(v).unwrap(), 1, &ratios).unwrap();
        for (i, r) in ratios.iter().enumerate() {
            let m = out.require(ModeRole::Bob(i)).unwrap();
            assert_relative_eq!(out.cm()[(2 * m, 2 * m)], r * v + 1.0 - r, epsilon = 1e-12);
        }
        assert!(out.is_physical());
    }

    #[test]
    fn detector_examples() {
        let sys = epr_state(3.0).unwrap().with_role(1, ModeRole::Bob(0)).unwrap();
        let out = detector_channel(&sys, 1, &DetectorParams::ideal()).unwrap();
        assert_relative_eq!(
            partial_trace(&out, &[0, 1]).unwrap().cm(),
            sys.cm(),
            epsilon = 1e-15
        );
        assert_eq!(out.role(2), ModeRole::Detector(0));
        assert_relative_eq!(out.block(2, 2), nalgebra::Matrix2::identity(), epsilon = 1e-15);
        assert_relative_eq!(out.block(0, 2), nalgebra::Matrix2::zeros(), epsilon = 1e-15);

        let det = DetectorParams::new(0.6, 0.1).unwrap();
        assert_relative_eq!(det.effective_transmittance(), 6.0 / 11.0, epsilon = 1e-15);

        let vac = vacuum_state(1).unwrap().with_role(0, ModeRole::Bob(0)).unwrap();
        let out = detector_channel(&vac, 0, &det).unwrap();
        assert_relative_eq!(out.cm(), &DMatrix::identity(4, 4), epsilon = 1e-15);

        assert!(detector_channel(&epr_state(2.0).unwrap(), 0, &det).is_err());
    }

    #[test]
    fn equivalent_channel_examples() {
        let a = ChannelParams::new(0.7, 0.03).unwrap();
        let same = equivalent_channel_reduction(0.3, &a, &a).unwrap();
        assert_relative_eq!(same.transmittance, 0.7, epsilon = 1e-15);
        assert_relative_eq!(same.excess_noise, 0.03, epsilon = 1e-15);

        let b = ChannelParams::new(0.7, 0.09).unwrap();
        let mixed = equivalent_channel_reduction(0.3, &a, &b).unwrap();
        assert_relative_eq!(mixed.excess_noise, 0.3 * 0.03 + 0.7 * 0.09, epsilon = 1e-15);

        let a = ChannelParams::new(0.8, 0.1).unwrap();
        let b = ChannelParams::new(0.4, 0.2).unwrap();
        let eq = equivalent_channel_reduction(0.5, &a, &b).unwrap();
        assert_relative_eq!(eq.transmittance, 0.6, epsilon = 1e-15);
        assert_relative_eq!(eq.excess_noise, 0.133_333_333_333_333_3, epsilon = 1e-12);

        assert!(equivalent_channel_reduction(1.5, &a, &b).is_err());
    }

    #[test]
    fn network_state_trivial_case() {
        let scn = NetworkScenario::uniform(1, 4.0);
        let sys = build_network_state(&scn).unwrap();
        assert_eq!(sys.roles(), &[ModeRole::Alice, ModeRole::Bob(0), ModeRole::Detector(0)]);
        let mut expected = DMatrix::identity(6, 6);
        expected
            .view_mut((0, 0), (4, 4))
            .copy_from(epr_state(5.0).unwrap().cm());
        assert_relative_eq!(sys.cm(), &expected, epsilon = 1e-14);
    }

    #[test]
    fn network_state_practical_is_physical() {
        for n in [1, 2, 4, 8] {
            for km in [0.0, 25.0, 100.0] {
                let sys = build_network_state(&NetworkScenario::practical(n, km)).unwrap();
                assert!(symplectic_eigenvalues(&sys).is_ok(), "n={n}, L={km}");
            }
        }
    }

    #[test]
    fn experimental_structure() {
        let sys = build_network_state(&NetworkScenario::experimental(NoisePlacement::Drop)).unwrap();
        let (b0, b1) = (1, 2);
        assert!(sys.cm()[(0, 2 * b0)].abs() > 1.0);
        assert!(sys.cm()[(0, 2 * b1)].abs() > 1.0);
        let t = fiber_transmittance(30.0, 0.2).unwrap();
        let want = (0.502f64 * 0.485).sqrt() * t * 0.5 * 4.3;
        assert_relative_eq!(sys.cm()[(2 * b0, 2 * b1)], want, epsilon = 1e-12);
        assert_relative_eq!(sys.cm()[(2 * b0 + 1, 2 * b1 + 1)], want, epsilon = 1e-12);
    }

    #[test]
    fn input_referred_noise_round_trip() {
        for placement in [NoisePlacement::Drop, NoisePlacement::Shared] {
            let scn = NetworkScenario::experimental(placement);
            for (i, want) in [0.085, 0.103].iter().enumerate() {
                let ch = scn.end_to_end_channel(i).unwrap();
                assert_relative_eq!(ch.excess_noise, *want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reduction_shapes() {
        let scn = NetworkScenario::practical(2, 10.0);
        assert_eq!(reduce_to_two_user(&scn, 1).unwrap(), (scn.clone(), 1));

        let mut scn = NetworkScenario::practical(5, 10.0);
        for u in &mut scn.users {
            u.drop_km = 2.0;
            u.drop_excess_noise = 0.01;
        }
        let (red, idx) = reduce_to_two_user(&scn, 2).unwrap();
        assert_eq!(red.n_users(), 2);
        assert_eq!(idx, 1);
        assert_relative_eq!(red.users[0].ratio, 0.8, epsilon = 1e-12);
        assert_relative_eq!(red.users[0].drop_km, 2.0, epsilon = 1e-9);
        assert_relative_eq!(red.users[0].drop_excess_noise, 0.01, epsilon = 1e-12);

        scn.users[4].detector.efficiency = 0.5;
        assert!(matches!(
            reduce_to_two_user(&scn, 0),
            Err(Error::UnsupportedReduction(_))
        ));
    }
}
