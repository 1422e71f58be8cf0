//! Zero-mean Gaussian states in shot-noise units.
//!
//! A state of `n` modes is carried entirely by its `2n x 2n` covariance
//! matrix with quadratures ordered `(x1, p1, x2, p2, ...)` and the vacuum
//! normalised to the identity. Every mode carries a [`ModeRole`] so that
//! downstream code can find Alice, each Bob and each trusted detector ancilla
//! without tracking indices through reorderings.
//!
//! All transformations are value-semantic: they take a state by reference and
//! return a fresh one.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};

/// Relative tolerance on the symmetry of a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Symplectic eigenvalues down to `1 - PHYSICALITY_TOL` are accepted and
/// clamped to 1; anything lower violates the uncertainty principle.
pub const PHYSICALITY_TOL: f64 = 1e-7;

const SYMPLECTIC_TOL: f64 = 1e-9;
const G_SERIES_CUTOFF: f64 = 1e-12;

/// Who owns a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModeRole {
    Alice,
    /// Signal mode of user `i` (zero-based).
    Bob(usize),
    /// Trusted detector ancilla of user `i` (zero-based).
    Detector(usize),
    Aux,
}

impl fmt::Display for ModeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeRole::Alice => write!(f, "alice"),
            ModeRole::Bob(i) => write!(f, "bob{}", i + 1),
            ModeRole::Detector(i) => write!(f, "det{}", i + 1),
            ModeRole::Aux => write!(f, "aux"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    X,
    P,
}

impl Quadrature {
    fn offset(self) -> usize {
        match self {
            Quadrature::X => 0,
            Quadrature::P => 1,
        }
    }
}

/// A multimode zero-mean Gaussian state.
///
/// Construction checks the shape, the symmetry of the covariance matrix and
/// the uniqueness of the non-auxiliary roles. Physicality is checked lazily
/// (see [`GaussianSystem::check_physical`]) because estimated matrices may
/// legitimately fail it and still need to be inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSystem {
    cm: DMatrix<f64>,
    roles: Vec<ModeRole>,
}

impl GaussianSystem {
    pub fn new(cm: DMatrix<f64>, roles: Vec<ModeRole>) -> Result<Self> {
        let dim = cm.nrows();
        if cm.ncols() != dim {
            return Err(Error::invalid(format!(
                "covariance matrix is not square: {}x{}",
                dim,
                cm.ncols()
            )));
        }
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "covariance dimension must be a positive even number, got {dim}"
            )));
        }
        if roles.len() != dim / 2 {
            return Err(Error::invalid(format!(
                "{} roles given for {} modes",
                roles.len(),
                dim / 2
            )));
        }
        if cm.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance matrix has non-finite entries"));
        }
        let scale = cm.amax().max(1.0);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (cm[(i, j)] - cm[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!(
                        "covariance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        check_roles(&roles)?;
        let cm = (&cm + cm.transpose()) * 0.5;
        Ok(GaussianSystem { cm, roles })
    }

    pub fn n_modes(&self) -> usize {
        self.roles.len()
    }

    pub fn cm(&self) -> &DMatrix<f64> {
        &self.cm
    }

    pub fn into_cm(self) -> DMatrix<f64> {
        self.cm
    }

    pub fn roles(&self) -> &[ModeRole] {
        &self.roles
    }

    pub fn role(&self, mode: usize) -> ModeRole {
        self.roles[mode]
    }

    pub fn mode_of(&self, role: ModeRole) -> Option<usize> {
        self.roles.iter().position(|r| *r == role)
    }

    pub fn require(&self, role: ModeRole) -> Result<usize> {
        self.mode_of(role)
            .ok_or_else(|| Error::invalid(format!("state has no {role} mode")))
    }

    /// `(user, mode)` pairs for every Bob, ordered by user.
    pub fn bob_modes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .roles
            .iter()
            .enumerate()
            .filter_map(|(m, r)| match r {
                ModeRole::Bob(i) => Some((*i, m)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Modes of all trusted detector ancillas, ordered by user.
    pub fn detector_modes(&self) -> Vec<usize> {
        let mut out: Vec<_> = self
            .roles
            .iter()
            .enumerate()
            .filter_map(|(m, r)| match r {
                ModeRole::Detector(i) => Some((*i, m)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, m)| m).collect()
    }

    /// The 2x2 block coupling modes `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> Matrix2<f64> {
        self.cm.fixed_view::<2, 2>(2 * i, 2 * j).into_owned()
    }

    pub fn with_role(mut self, mode: usize, role: ModeRole) -> Result<Self> {
        self.check_mode(mode)?;
        self.roles[mode] = role;
        check_roles(&self.roles)?;
        Ok(self)
    }

    /// Tensor product `self ⊗ other`; the modes of `other` are appended.
    pub fn append(&self, other: &GaussianSystem) -> Result<Self> {
        let a = self.cm.nrows();
        let b = other.cm.nrows();
        let mut cm = DMatrix::zeros(a + b, a + b);
        cm.view_mut((0, 0), (a, a)).copy_from(&self.cm);
        cm.view_mut((a, a), (b, b)).copy_from(&other.cm);
        let mut roles = self.roles.clone();
        roles.extend_from_slice(&other.roles);
        check_roles(&roles)?;
        Ok(GaussianSystem { cm, roles })
    }

    /// Appends one vacuum mode with the given role; it becomes the last mode.
    pub fn append_vacuum(&self, role: ModeRole) -> Result<Self> {
        let vac = GaussianSystem {
            cm: DMatrix::identity(2, 2),
            roles: vec![role],
        };
        self.append(&vac)
    }

    pub fn check_physical(&self) -> Result<()> {
        symplectic_eigenvalues(self).map(|_| ())
    }

    pub fn is_physical(&self) -> bool {
        self.check_physical().is_ok()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for a {}-mode state",
                self.n_modes()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(cm: DMatrix<f64>, roles: Vec<ModeRole>) -> Self {
        debug_assert_eq!(cm.nrows(), 2 * roles.len());
        GaussianSystem { cm, roles }
    }
}

fn check_roles(roles: &[ModeRole]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in roles {
        if *r != ModeRole::Aux && !seen.insert(*r) {
            return Err(Error::invalid(format!("duplicate mode role {r}")));
        }
    }
    Ok(())
}

/// The symplectic form `⊕ [[0, 1], [-1, 0]]` on `n` modes.
pub fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

/// A linear symplectic transformation acting on covariance matrices by
/// congruence, `γ ↦ S γ Sᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMap {
    s: DMatrix<f64>,
}

impl SymplecticMap {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        let dim = s.nrows();
        if s.ncols() != dim || dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::invalid("symplectic matrix must be square of even size"));
        }
        let w = omega(dim / 2);
        let defect = (&s * &w * s.transpose() - &w).amax();
        if defect > SYMPLECTIC_TOL * s.amax().powi(2).max(1.0) {
            return Err(Error::invalid(format!(
                "matrix is not symplectic (defect {defect:e})"
            )));
        }
        Ok(SymplecticMap { s })
    }

    pub fn n_modes(&self) -> usize {
        self.s.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Two-mode beam splitter embedded in `n` modes, same convention as
    /// [`beam_splitter`].
    pub fn beam_splitter(n: usize, i: usize, j: usize, eta: f64) -> Result<Self> {
        check_pair(n, i, j)?;
        check_unit_interval("transmittance", eta)?;
        let (t, r) = (eta.sqrt(), (1.0 - eta).sqrt());
        let mut s = DMatrix::identity(2 * n, 2 * n);
        for q in 0..2 {
            let (a, b) = (2 * i + q, 2 * j + q);
            s[(a, a)] = t;
            s[(a, b)] = r;
            s[(b, a)] = -r;
            s[(b, b)] = t;
        }
        Ok(SymplecticMap { s })
    }

    /// Single-mode squeezer `diag(e^{-r}, e^{r})` on mode `m`.
    pub fn squeezer(n: usize, m: usize, r: f64) -> Result<Self> {
        if m >= n {
            return Err(Error::invalid(format!("mode {m} out of range")));
        }
        let mut s = DMatrix::identity(2 * n, 2 * n);
        s[(2 * m, 2 * m)] = (-r).exp();
        s[(2 * m + 1, 2 * m + 1)] = r.exp();
        Ok(SymplecticMap { s })
    }

    /// Phase-space rotation by `theta` on mode `m`.
    pub fn rotation(n: usize, m: usize, theta: f64) -> Result<Self> {
        if m >= n {
            return Err(Error::invalid(format!("mode {m} out of range")));
        }
        let (sn, cs) = theta.sin_cos();
        let mut s = DMatrix::identity(2 * n, 2 * n);
        s[(2 * m, 2 * m)] = cs;
        s[(2 * m, 2 * m + 1)] = sn;
        s[(2 * m + 1, 2 * m)] = -sn;
        s[(2 * m + 1, 2 * m + 1)] = cs;
        Ok(SymplecticMap { s })
    }

    pub fn compose(&self, other: &SymplecticMap) -> Result<Self> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::invalid("mode count mismatch"));
        }
        Ok(SymplecticMap {
            s: &self.s * &other.s,
        })
    }

    pub fn apply(&self, sys: &GaussianSystem) -> Result<GaussianSystem> {
        if self.n_modes() != sys.n_modes() {
            return Err(Error::invalid(format!(
                "{}-mode map applied to a {}-mode state",
                self.n_modes(),
                sys.n_modes()
            )));
        }
        let cm = &self.s * sys.cm() * self.s.transpose();
        let cm = (&cm + cm.transpose()) * 0.5;
        Ok(GaussianSystem::from_parts_unchecked(cm, sys.roles.clone()))
    }
}

fn check_pair(n: usize, i: usize, j: usize) -> Result<()> {
    if i >= n || j >= n {
        return Err(Error::invalid(format!(
            "modes ({i}, {j}) out of range for {n} modes"
        )));
    }
    if i == j {
        return Err(Error::invalid("beam splitter needs two distinct modes"));
    }
    Ok(())
}

pub(crate) fn check_unit_interval(what: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

/// `n` vacuum modes, all auxiliary.
pub fn vacuum_state(n: usize) -> Result<GaussianSystem> {
    if n == 0 {
        return Err(Error::invalid("vacuum state needs at least one mode"));
    }
    Ok(GaussianSystem::from_parts_unchecked(
        DMatrix::identity(2 * n, 2 * n),
        vec![ModeRole::Aux; n],
    ))
}

/// Two-mode squeezed vacuum with arm variance `v`. The first mode is Alice's,
/// the second is the auxiliary mode she sends out.
pub fn epr_state(v: f64) -> Result<GaussianSystem> {
    if !(v >= 1.0) || !v.is_finite() {
        return Err(Error::invalid(format!("EPR variance {v} must be >= 1")));
    }
    let c = (v * v - 1.0).sqrt();
    #[rustfmt::skip]
    let cm = DMatrix::from_row_slice(4, 4, &[
        v,   0.0, c,   0.0,
        0.0, v,   0.0, -c,
        c,   0.0, v,   0.0,
        0.0, -c,  0.0, v,
    ]);
    Ok(GaussianSystem::from_parts_unchecked(
        cm,
        vec![ModeRole::Alice, ModeRole::Aux],
    ))
}

/// Mixes modes `i` and `j` on a beam splitter of transmittance `eta`:
/// `a_i ↦ √η a_i + √(1-η) a_j`, `a_j ↦ -√(1-η) a_i + √η a_j` on both
/// quadratures.
pub fn beam_splitter(sys: &GaussianSystem, i: usize, j: usize, eta: f64) -> Result<GaussianSystem> {
    check_pair(sys.n_modes(), i, j)?;
    check_unit_interval("transmittance", eta)?;
    let (t, r) = (eta.sqrt(), (1.0 - eta).sqrt());
    let mut cm = sys.cm.clone();
    let dim = cm.nrows();
    for q in 0..2 {
        let (a, b) = (2 * i + q, 2 * j + q);
        for k in 0..dim {
            let (va, vb) = (cm[(a, k)], cm[(b, k)]);
            cm[(a, k)] = t * va + r * vb;
            cm[(b, k)] = -r * va + t * vb;
        }
        for k in 0..dim {
            let (va, vb) = (cm[(k, a)], cm[(k, b)]);
            cm[(k, a)] = t * va + r * vb;
            cm[(k, b)] = -r * va + t * vb;
        }
    }
    Ok(GaussianSystem::from_parts_unchecked(cm, sys.roles.clone()))
}

/// Reduced state on `keep`, in the order given.
pub fn partial_trace(sys: &GaussianSystem, keep: &[usize]) -> Result<GaussianSystem> {
    if keep.is_empty() {
        return Err(Error::invalid("partial trace must keep at least one mode"));
    }
    let mut seen = HashSet::new();
    for &m in keep {
        sys.check_mode(m)?;
        if !seen.insert(m) {
            return Err(Error::invalid(format!("mode {m} listed twice")));
        }
    }
    let idx = quadrature_indices(keep);
    let cm = sys.cm.select_rows(idx.iter()).select_columns(idx.iter());
    let roles = keep.iter().map(|&m| sys.roles[m]).collect();
    Ok(GaussianSystem::from_parts_unchecked(cm, roles))
}

/// Reduced state on the modes carrying `roles`, in the order given.
pub fn select_roles(sys: &GaussianSystem, roles: &[ModeRole]) -> Result<GaussianSystem> {
    let keep = roles
        .iter()
        .map(|r| sys.require(*r))
        .collect::<Result<Vec<_>>>()?;
    partial_trace(sys, &keep)
}

fn quadrature_indices(modes: &[usize]) -> Vec<usize> {
    modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect()
}

fn remaining_indices(dim: usize, skip: &[usize]) -> Vec<usize> {
    (0..dim).filter(|k| !skip.contains(k)).collect()
}

/// Conditional state of the other modes after heterodyne detection of `m`:
/// `γ_R - σ (γ_m + I)⁻¹ σᵀ`. The result does not depend on the outcome.
pub fn heterodyne_condition(sys: &GaussianSystem, m: usize) -> Result<GaussianSystem> {
    sys.check_mode(m)?;
    if sys.n_modes() == 1 {
        return Err(Error::invalid("cannot condition a single-mode state on itself"));
    }
    let measured = [2 * m, 2 * m + 1];
    let rest = remaining_indices(sys.cm.nrows(), &measured);
    let gm = sys.block(m, m) + Matrix2::identity();
    let det = gm.determinant();
    if !(det > 1e-12 * gm.amax().powi(2).max(1.0)) {
        return Err(Error::NumericDegeneracy(format!(
            "heterodyne block of {} is singular (det {det:e})",
            sys.roles[m]
        )));
    }
    let inv = gm
        .try_inverse()
        .ok_or_else(|| Error::NumericDegeneracy("singular heterodyne block".into()))?;
    let sigma = sys.cm.select_rows(rest.iter()).select_columns(measured.iter());
    let reduced = sys.cm.select_rows(rest.iter()).select_columns(rest.iter());
    let cm = reduced - &sigma * inv * sigma.transpose();
    let cm = (&cm + cm.transpose()) * 0.5;
    let roles = sys
        .roles
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != m)
        .map(|(_, r)| *r)
        .collect();
    Ok(GaussianSystem::from_parts_unchecked(cm, roles))
}

/// Heterodyne-conditions on every mode in `roles`, one mode at a time.
pub fn heterodyne_condition_roles(sys: &GaussianSystem, roles: &[ModeRole]) -> Result<GaussianSystem> {
    let mut cur = sys.clone();
    for role in roles {
        let m = cur.require(*role)?;
        cur = heterodyne_condition(&cur, m)?;
    }
    Ok(cur)
}

/// Conditional state after homodyne detection of quadrature `quad` of mode
/// `m`: `γ_R - σ (X γ_m X)^+ σᵀ` with `X` projecting onto the measured
/// quadrature.
pub fn homodyne_condition(sys: &GaussianSystem, m: usize, quad: Quadrature) -> Result<GaussianSystem> {
    sys.check_mode(m)?;
    if sys.n_modes() == 1 {
        return Err(Error::invalid("cannot condition a single-mode state on itself"));
    }
    let q = 2 * m + quad.offset();
    let var = sys.cm[(q, q)];
    if !(var > 1e-12) {
        return Err(Error::NumericDegeneracy(format!(
            "measured quadrature variance {var:e} is not positive"
        )));
    }
    let rest = remaining_indices(sys.cm.nrows(), &[2 * m, 2 * m + 1]);
    let col = sys.cm.select_rows(rest.iter()).column(q).into_owned();
    let reduced = sys.cm.select_rows(rest.iter()).select_columns(rest.iter());
    let cm = reduced - &col * col.transpose() / var;
    let roles = sys
        .roles
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != m)
        .map(|(_, r)| *r)
        .collect();
    Ok(GaussianSystem::from_parts_unchecked(cm, roles))
}

/// Symplectic spectrum of a state, ascending, one value per mode.
///
/// Computed as the singular values of `γ^{1/2} Ω γ^{1/2}`, which is similar
/// to `Ωγ` and therefore shares the moduli of its eigenvalues (the spectrum
/// of `iΩγ`). Values in `[1 - PHYSICALITY_TOL, 1)` are clamped to 1.
pub fn symplectic_eigenvalues(sys: &GaussianSystem) -> Result<Vec<f64>> {
    symplectic_spectrum(sys.cm())
}

pub(crate) fn symplectic_spectrum(cm: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = cm.nrows() / 2;
    let eig = cm.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Unphysical(format!(
            "covariance matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
    let k = &root * omega(n) * &root;
    let mut sv: Vec<f64> = k.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    let mut nus = Vec::with_capacity(n);
    for pair in sv.chunks(2) {
        let nu = 0.5 * (pair[0] + pair[1]);
        if nu < 1.0 - PHYSICALITY_TOL {
            return Err(Error::Unphysical(format!(
                "symplectic eigenvalue {nu} violates the uncertainty principle"
            )));
        }
        nus.push(nu.max(1.0));
    }
    Ok(nus)
}

/// Nearest physical state in the Williamson sense: writes `γ = S D Sᵀ` and
/// raises every symplectic eigenvalue below 1 to 1, keeping `S`.
///
/// Physical states are returned unchanged. `γ` must be positive definite.
pub fn physical_projection(sys: &GaussianSystem) -> Result<GaussianSystem> {
    if sys.is_physical() {
        return Ok(sys.clone());
    }
    let cm = sys.cm();
    let n = sys.n_modes();
    let eig = cm.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Unphysical(format!(
            "covariance matrix is not positive definite (min eigenvalue {min:e})"
        )));
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let root = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
    let k = &root * omega(n) * &root;
    let (mut q, t) = k.schur().unpack();
    let mut lift = DMatrix::zeros(2 * n, 2 * n);
    for b in 0..n {
        let (i, j) = (2 * b, 2 * b + 1);
        let mut nu = t[(i, j)];
        if nu < 0.0 {
            q.swap_columns(i, j);
            nu = -nu;
        }
        if nu < 1.0 {
            // S = γ^{1/2} Q D^{-1/2}; the added term is S (1 - D) Sᵀ.
            lift[(i, i)] = (1.0 - nu) / nu;
            lift[(j, j)] = (1.0 - nu) / nu;
        }
    }
    let s = &root * &q;
    let mut out = cm + &s * lift * s.transpose();
    out = (&out + out.transpose()) * 0.5;
    GaussianSystem::new(out, sys.roles().to_vec())
}

/// Bosonic entropy function `g(x) = (x+1) log2(x+1) - x log2 x`, in bits,
/// for a mode with mean occupation `x`.
pub fn entropy_g(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < G_SERIES_CUTOFF {
        x * (std::f64::consts::LOG2_E - x.log2())
    } else {
        (x + 1.0) * (x + 1.0).log2() - x * x.log2()
    }
}

/// Von Neumann entropy in bits, `Σ g((ν - 1) / 2)`.
pub fn von_neumann_entropy(sys: &GaussianSystem) -> Result<f64> {
    Ok(symplectic_eigenvalues(sys)?
        .into_iter()
        .map(|nu| entropy_g((nu - 1.0) / 2.0))
        .sum())
}
