//! Mutual informations, conditional Holevo terms, per-user and total key
//! rates, the upper and lower network limits, and modulation optimisation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{
    build_network_state, detector_channel, equivalent_channel_reduction, thermal_loss_channel,
    ChannelParams, DetectorParams, NetworkScenario,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    epr_state, heterodyne_condition, heterodyne_condition_roles, select_roles, von_neumann_entropy,
    GaussianSystem, ModeRole, SYMMETRY_TOL,
};

/// Covariance of classical heterodyne outcomes, two real outcomes (x, p)
/// per measured mode. Normalised so that a vacuum input gives variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeCovariance {
    sigma: DMatrix<f64>,
    modes: Vec<ModeRole>,
}

impl OutcomeCovariance {
    pub fn new(sigma: DMatrix<f64>, modes: Vec<ModeRole>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != 2 * modes.len() || modes.is_empty() {
            return Err(Error::invalid(format!(
                "{}x{} outcome covariance for {} modes",
                sigma.nrows(),
                sigma.ncols(),
                modes.len()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("outcome covariance has non-finite entries"));
        }
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::invalid("outcome covariance is not symmetric"));
        }
        for (k, r) in modes.iter().enumerate() {
            if modes[..k].contains(r) {
                return Err(Error::invalid(format!("mode {r} listed twice")));
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        Ok(OutcomeCovariance { sigma, modes })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn modes(&self) -> &[ModeRole] {
        &self.modes
    }

    fn indices(&self, roles: &[ModeRole]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(2 * roles.len());
        for r in roles {
            let k = self
                .modes
                .iter()
                .position(|m| m == r)
                .ok_or_else(|| Error::invalid(format!("{r} was not measured")))?;
            out.extend([2 * k, 2 * k + 1]);
        }
        Ok(out)
    }

    fn sub(&self, idx: &[usize]) -> DMatrix<f64> {
        self.sigma.select_rows(idx.iter()).select_columns(idx.iter())
    }
}

/// Heterodyne outcome covariance `Σ = (γ_MM + I) / 2` of the modes in
/// `measured`, in that order.
pub fn outcome_covariance(sys: &GaussianSystem, measured: &[ModeRole]) -> Result<OutcomeCovariance> {
    let reduced = select_roles(sys, measured)?;
    let n = reduced.cm().nrows();
    let sigma = (reduced.cm() + DMatrix::identity(n, n)) * 0.5;
    OutcomeCovariance::new(sigma, measured.to_vec())
}

/// Inverse of [`outcome_covariance`]: `γ = 2Σ - I`.
pub fn state_from_outcomes(sigma: &OutcomeCovariance) -> Result<GaussianSystem> {
    let n = sigma.sigma.nrows();
    GaussianSystem::new(sigma.sigma() * 2.0 - DMatrix::identity(n, n), sigma.modes.clone())
}

fn log2_det(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericDegeneracy("covariance is not positive definite".into()))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for k in 0..m.nrows() {
        let d = l[(k, k)];
        if !(d > 0.0) {
            return Err(Error::NumericDegeneracy("singular covariance".into()));
        }
        acc += d.ln();
    }
    Ok(2.0 * acc / std::f64::consts::LN_2)
}

fn check_parts(a: &[ModeRole], b: &[ModeRole]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mutual information needs two nonempty parts"));
    }
    if a.iter().any(|r| b.contains(r)) {
        return Err(Error::invalid("mutual information parts overlap"));
    }
    Ok(())
}

/// Shannon mutual information between the outcomes of two groups of modes,
/// `½ log2(det Σ_A det Σ_B / det Σ_AB)`.
pub fn gaussian_mutual_information(sigma: &OutcomeCovariance, a: &[ModeRole], b: &[ModeRole]) -> Result<f64> {
    check_parts(a, b)?;
    let ia = sigma.indices(a)?;
    let ib = sigma.indices(b)?;
    let iab: Vec<usize> = ia.iter().chain(&ib).copied().collect();
    let mi = 0.5 * (log2_det(&sigma.sub(&ia))? + log2_det(&sigma.sub(&ib))? - log2_det(&sigma.sub(&iab))?);
    Ok(mi.max(0.0))
}

/// Same quantity from conditional variances, treating the x and p outcomes
/// as separate channels: `Σ_q ½ log2(det Σ_Bq / det Σ_Bq|Aq)` with the
/// conditional covariance from a Schur complement. Agrees with
/// [`gaussian_mutual_information`] whenever x and p outcomes are
/// uncorrelated.
pub fn per_quadrature_mutual_information(sigma: &OutcomeCovariance, a: &[ModeRole], b: &[ModeRole]) -> Result<f64> {
    check_parts(a, b)?;
    let ia = sigma.indices(a)?;
    let ib = sigma.indices(b)?;
    let mut total = 0.0;
    for q in 0..2 {
        let qa: Vec<usize> = ia.iter().copied().filter(|k| k % 2 == q).collect();
        let qb: Vec<usize> = ib.iter().copied().filter(|k| k % 2 == q).collect();
        let s_a = sigma.sub(&qa);
        let s_b = sigma.sub(&qb);
        let s_ba = sigma.sigma.select_rows(qb.iter()).select_columns(qa.iter());
        let inv_a = s_a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericDegeneracy("conditioning block is singular".into()))?
            .inverse();
        let cond = &s_b - &s_ba * inv_a * s_ba.transpose();
        total += 0.5 * (log2_det(&s_b)? - log2_det(&cond)?);
    }
    Ok(total.max(0.0))
}

fn bob_roles(sys: &GaussianSystem) -> Vec<ModeRole> {
    sys.bob_modes().into_iter().map(|(i, _)| ModeRole::Bob(i)).collect()
}

fn detector_roles(sys: &GaussianSystem) -> Vec<ModeRole> {
    sys.detector_modes().into_iter().map(|m| sys.role(m)).collect()
}

fn entropy_of(sys: &GaussianSystem, roles: &[ModeRole]) -> Result<f64> {
    von_neumann_entropy(&select_roles(sys, roles)?)
}

/// Eve's conditional information on user `i`'s outcome given every other
/// user's outcome:
/// `S(A B_i D | b_r) - S(A D | b_i b_r)`, with all detector ancillas `D`
/// treated as trusted.
pub fn holevo_conditional(sys: &GaussianSystem, user: usize) -> Result<f64> {
    let bob = ModeRole::Bob(user);
    sys.require(bob)?;
    sys.require(ModeRole::Alice)?;
    let others: Vec<ModeRole> = bob_roles(sys).into_iter().filter(|r| *r != bob).collect();
    let dets = detector_roles(sys);

    let given_rest = heterodyne_condition_roles(sys, &others)?;
    let mut with_bob = vec![ModeRole::Alice, bob];
    with_bob.extend(&dets);
    let s_before = entropy_of(&given_rest, &with_bob)?;

    let given_all = heterodyne_condition(&given_rest, given_rest.require(bob)?)?;
    let mut without_bob = vec![ModeRole::Alice];
    without_bob.extend(&dets);
    let s_after = entropy_of(&given_all, &without_bob)?;
    Ok(s_before - s_after)
}

/// Per-user terms of the network key rate, in bits per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserRate {
    pub user: usize,
    /// `I(a : b_i)`, before the reconciliation factor.
    pub mi_ab: f64,
    /// `I(b_i : b_r)`.
    pub mi_rest: f64,
    /// `S(b_i : E | b_r)`.
    pub holevo_cond: f64,
    /// `β I(a:b_i) - I(b_i:b_r) - S(b_i:E|b_r)`.
    pub k_raw: f64,
    pub k_clamped: f64,
    /// Rate when every other user colludes with Eve.
    pub k_lb: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "reconciliation efficiency {beta} outside (0, 1]"
        )));
    }
    Ok(())
}

fn measured_roles(sys: &GaussianSystem) -> Vec<ModeRole> {
    std::iter::once(ModeRole::Alice).chain(bob_roles(sys)).collect()
}

/// Worst-case rate of user `i`: the other users' modes go to Eve, so only
/// `{A, B_i, D_i}` remain trusted.
pub fn lower_limit_from_state(sys: &GaussianSystem, user: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let bob = ModeRole::Bob(user);
    let mut keep = vec![ModeRole::Alice, bob];
    if sys.mode_of(ModeRole::Detector(user)).is_some() {
        keep.push(ModeRole::Detector(user));
    }
    let local = select_roles(sys, &keep)?;
    let sigma = outcome_covariance(&local, &[ModeRole::Alice, bob])?;
    let mi = gaussian_mutual_information(&sigma, &[ModeRole::Alice], &[bob])?;
    let s_all = von_neumann_entropy(&local)?;
    let cond = heterodyne_condition(&local, local.require(bob)?)?;
    let s_cond = von_neumann_entropy(&cond)?;
    Ok(beta * mi - (s_all - s_cond))
}

/// All terms of the key rate of user `i`.
pub fn key_rate_user(sys: &GaussianSystem, user: usize, beta: f64) -> Result<UserRate> {
    check_beta(beta)?;
    let sigma = outcome_covariance(sys, &measured_roles(sys))?;
    user_rate_with(sys, &sigma, user, beta)
}

fn user_rate_with(sys: &GaussianSystem, sigma: &OutcomeCovariance, user: usize, beta: f64) -> Result<UserRate> {
    let bob = ModeRole::Bob(user);
    let others: Vec<ModeRole> = bob_roles(sys).into_iter().filter(|r| *r != bob).collect();
    let mi_ab = gaussian_mutual_information(sigma, &[ModeRole::Alice], &[bob])?;
    let mi_rest = if others.is_empty() {
        0.0
    } else {
        gaussian_mutual_information(sigma, &[bob], &others)?
    };
    let holevo_cond = holevo_conditional(sys, user)?;
    let k_raw = beta * mi_ab - mi_rest - holevo_cond;
    Ok(UserRate {
        user,
        mi_ab,
        mi_rest,
        holevo_cond,
        k_raw,
        k_clamped: k_raw.max(0.0),
        k_lb: lower_limit_from_state(sys, user, beta)?,
    })
}

/// Best-case rate: all receivers cooperate as one,
/// `β I(a : b_1..b_N) - [S(A B D) - S(A D | b_1..b_N)]`.
pub fn upper_limit_joint(sys: &GaussianSystem, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let bobs = bob_roles(sys);
    if bobs.is_empty() {
        return Err(Error::invalid("state has no Bob modes"));
    }
    let sigma = outcome_covariance(sys, &measured_roles(sys))?;
    let mi = gaussian_mutual_information(&sigma, &[ModeRole::Alice], &bobs)?;
    let s_all = von_neumann_entropy(sys)?;
    let cond = heterodyne_condition_roles(sys, &bobs)?;
    let mut keep = vec![ModeRole::Alice];
    keep.extend(detector_roles(sys));
    let s_cond = entropy_of(&cond, &keep)?;
    Ok(beta * mi - (s_all - s_cond))
}

/// State of a single link: EPR source, one channel, one detector.
pub fn point_to_point_state(source_variance: f64, ch: &ChannelParams, det: &DetectorParams) -> Result<GaussianSystem> {
    let sys = epr_state(source_variance)?;
    let sys = thermal_loss_channel(&sys, 1, ch)?.with_role(1, ModeRole::Bob(0))?;
    detector_channel(&sys, 1, det)
}

/// Key rate of a single link with reverse reconciliation and trusted
/// detector noise.
pub fn point_to_point_rate(source_variance: f64, ch: &ChannelParams, det: &DetectorParams, beta: f64) -> Result<f64> {
    let sys = point_to_point_state(source_variance, ch, det)?;
    Ok(key_rate_user(&sys, 0, beta)?.k_raw)
}

/// Best-case rate as a single link: the feeder followed by the
/// ratio-weighted equivalent of all drops, detected by one detector whose
/// effective transmittance is the ratio-weighted mean of the users'.
pub fn upper_limit_p2p(scn: &NetworkScenario, beta: f64) -> Result<f64> {
    scn.validate()?;
    let mut ratio = scn.users[0].ratio;
    let mut drop = scn.drop_channel(0)?;
    for k in 1..scn.n_users() {
        let r = scn.users[k].ratio;
        drop = equivalent_channel_reduction(ratio / (ratio + r), &drop, &scn.drop_channel(k)?)?;
        ratio += r;
    }
    let eta: f64 = scn
        .users
        .iter()
        .map(|u| u.ratio * u.detector.effective_transmittance())
        .sum();
    let det = DetectorParams::new(eta.min(1.0), 0.0)?;
    point_to_point_rate(scn.source_variance, &scn.feeder_channel()?.then(&drop), &det, beta)
}

/// Worst-case rate of user `i` as a single link with transmittance
/// `T T'` and input-referred noise `ε + ε'/T`.
pub fn lower_limit(scn: &NetworkScenario, beta: f64, user: usize) -> Result<f64> {
    scn.validate()?;
    if user >= scn.n_users() {
        return Err(Error::invalid(format!("no user {user}")));
    }
    point_to_point_rate(
        scn.source_variance,
        &scn.end_to_end_channel(user)?,
        &scn.users[user].detector,
        beta,
    )
}

/// Per-user rates together with the network totals and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub beta: f64,
    pub users: Vec<UserRate>,
    /// Sum of clamped per-user rates.
    pub k_tot: f64,
    /// Joint-receiver upper limit.
    pub k_ub: f64,
    /// Single-link upper limit, when a scenario is available.
    pub k_ub_p2p: Option<f64>,
    /// Sum of clamped per-user lower limits.
    pub k_lb: f64,
    /// `k_tot / k_ub`, when `k_ub > 0`.
    pub ratio: Option<f64>,
}

/// Key-rate report for a network state with modes `alice`, `bob(i)` and
/// optionally `detector(i)`.
pub fn key_rate_total(sys: &GaussianSystem, beta: f64) -> Result<KeyRateReport> {
    check_beta(beta)?;
    let bobs = sys.bob_modes();
    if bobs.is_empty() {
        return Err(Error::invalid("state has no Bob modes"));
    }
    let sigma = outcome_covariance(sys, &measured_roles(sys))?;
    let users = bobs
        .par_iter()
        .map(|(i, _)| user_rate_with(sys, &sigma, *i, beta))
        .collect::<Result<Vec<_>>>()?;
    let k_tot = users.iter().map(|u| u.k_clamped).sum();
    let k_lb = users.iter().map(|u| u.k_lb.max(0.0)).sum();
    let k_ub = upper_limit_joint(sys, beta)?;
    Ok(KeyRateReport {
        beta,
        users,
        k_tot,
        k_ub,
        k_ub_p2p: None,
        k_lb,
        ratio: (k_ub > 0.0).then(|| k_tot / k_ub),
    })
}

/// Builds the network state of `scn` and reports its key rates, including
/// the single-link upper limit.
pub fn network_report(scn: &NetworkScenario) -> Result<KeyRateReport> {
    let sys = build_network_state(scn)?;
    let mut report = key_rate_total(&sys, scn.beta)?;
    report.k_ub_p2p = Some(upper_limit_p2p(scn, scn.beta)?);
    Ok(report)
}

/// Rate in bits per second after discarding the `overhead` fraction of
/// symbols.
pub fn bits_per_second(k: f64, baud: f64, overhead: f64) -> Result<f64> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::invalid(format!("key rate {k} must be finite and >= 0")));
    }
    if !(baud >= 0.0) || !baud.is_finite() {
        return Err(Error::invalid(format!("symbol rate {baud} must be finite and >= 0")));
    }
    if !(0.0..=1.0).contains(&overhead) {
        return Err(Error::invalid(format!("overhead {overhead} outside [0, 1]")));
    }
    Ok(k * baud * (1.0 - overhead))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationOptimum {
    pub modulation_variance: f64,
    pub k_tot: f64,
    /// The maximum sits on the upper bound of the search interval.
    pub saturated: bool,
    pub evaluations: usize,
}

const GOLDEN_TOL: f64 = 1e-3;

/// Maximises the total key rate of `scn` over the modulation variance
/// `V_M ∈ [lo, hi]` by golden-section search.
///
/// Where every user's rate is negative the search climbs the summed raw
/// rate instead, so it does not stall on a flat zero region.
pub fn optimize_modulation_variance(scn: &NetworkScenario, beta: f64, lo: f64, hi: f64) -> Result<ModulationOptimum> {
    check_beta(beta)?;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!("invalid bounds [{lo}, {hi}]")));
    }
    let mut evaluations = 0usize;
    let mut eval = |v_m: f64| -> Result<(f64, f64)> {
        evaluations += 1;
        let mut s = scn.clone();
        s.source_variance = v_m + 1.0;
        s.beta = beta;
        let sys = build_network_state(&s)?;
        let sigma = outcome_covariance(&sys, &measured_roles(&sys))?;
        let users = sys
            .bob_modes()
            .par_iter()
            .map(|(i, _)| user_rate_with(&sys, &sigma, *i, beta).map(|u| u.k_raw))
            .collect::<Result<Vec<_>>>()?;
        let k_tot: f64 = users.iter().map(|k| k.max(0.0)).sum();
        let score = if k_tot > 0.0 { k_tot } else { users.iter().sum::<f64>() - 1.0 };
        Ok((score, k_tot))
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?.0;
    let mut fd = eval(d)?.0;
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?.0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?.0;
        }
    }
    let mid = 0.5 * (a + b);
    let (s_mid, k_mid) = eval(mid)?;
    let (s_hi, k_hi) = eval(hi)?;
    let out = if hi - mid <= GOLDEN_TOL && s_hi >= s_mid {
        ModulationOptimum {
            modulation_variance: hi,
            k_tot: k_hi,
            saturated: true,
            evaluations,
        }
    } else {
        ModulationOptimum {
            modulation_variance: mid,
            k_tot: k_mid,
            saturated: false,
            evaluations,
        }
    };
    Ok(out)
}
