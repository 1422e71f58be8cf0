//! Independent reference implementations checked against the library.

use approx::assert_relative_eq;
use cvqkd::channels::{build_network_state, ChannelParams, DetectorParams, NetworkScenario};
use cvqkd::gaussian::{GaussianSystem, ModeRole};
use cvqkd::keyrate::{holevo_conditional, key_rate_total, lower_limit, point_to_point_rate, upper_limit_joint};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g(nu: f64) -> f64 {
    let (a, b) = ((nu + 1.0) / 2.0, (nu - 1.0) / 2.0);
    if b <= 0.0 {
        0.0
    } else {
        a * a.log2() - b * b.log2()
    }
}

/// Textbook single-link rate for Gaussian modulation, heterodyne detection,
/// reverse reconciliation and trusted detector noise.
fn closed_form_rate(v: f64, t: f64, eps: f64, eta: f64, v_el: f64, beta: f64) -> f64 {
    let chi_line = 1.0 / t - 1.0 + eps;
    let chi_het = (2.0 - eta + 2.0 * v_el) / eta;
    let chi_tot = chi_line + chi_het / t;
    let i_ab = ((v + chi_tot) / (1.0 + chi_tot)).log2();

    let a = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line).powi(2);
    let b = t * t * (v * chi_line + 1.0).powi(2);
    let l12 = |s: f64| (0.5 * (a + s * (a * a - 4.0 * b).sqrt())).sqrt();
    let norm = (t * (v + chi_tot)).powi(2);
    let c = (a * chi_het * chi_het + b + 1.0 + 2.0 * chi_het * (v * b.sqrt() + t * (v + chi_line)) + 2.0 * t * (v * v - 1.0)) / norm;
    let d = ((v + b.sqrt() * chi_het) / (t * (v + chi_tot))).powi(2);
    let l34 = |s: f64| (0.5 * (c + s * (c * c - 4.0 * d).sqrt())).sqrt();
    let chi_be = g(l12(1.0)) + g(l12(-1.0)) - g(l34(1.0)) - g(l34(-1.0));
    beta * i_ab - chi_be
}

#[test]
fn single_link_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let v = rng.random_range(1.5..60.0);
        let t = rng.random_range(0.01..1.0);
        let eps = rng.random_range(0.0..0.1);
        let eta = rng.random_range(0.3..1.0);
        let v_el = rng.random_range(0.0..0.3);
        let beta = rng.random_range(0.85..1.0);
        let want = closed_form_rate(v, t, eps, eta, v_el, beta);
        let ch = ChannelParams::new(t, eps).unwrap();
        let det = DetectorParams::new(eta, v_el).unwrap();
        let got = point_to_point_rate(v, &ch, &det, beta).unwrap();
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-3), "V={v} T={t} ε={eps}: {got} vs {want}");
    }
}

#[test]
fn lower_limit_matches_closed_form() {
    let scn = NetworkScenario::practical(8, 12.0);
    let t = 10f64.powf(-0.2 * 12.0 / 10.0) / 8.0;
    let want = closed_form_rate(5.0, t, 0.05, 0.6, 0.1, 0.956);
    assert_relative_eq!(lower_limit(&scn, 0.956, 3).unwrap(), want, max_relative = 1e-9);
}

fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

/// Entropy from the moduli of the (complex) eigenvalues of `Ωγ`.
fn entropy_eig(cm: &DMatrix<f64>) -> f64 {
    let n = cm.nrows() / 2;
    let mut mods: Vec<f64> = (omega(n) * cm).complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mods.sort_by(f64::total_cmp);
    mods.chunks(2).map(|p| g(0.5 * (p[0] + p[1]).max(1.0))).sum()
}

/// Heterodyne conditioning on all `measured` modes at once.
fn joint_condition(cm: &DMatrix<f64>, measured: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    let n = cm.nrows() / 2;
    let keep: Vec<usize> = (0..n).filter(|m| !measured.contains(m)).collect();
    let qi = |ms: &[usize]| ms.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect::<Vec<_>>();
    let (k, m) = (qi(&keep), qi(measured));
    if m.is_empty() {
        return (cm.clone(), keep);
    }
    let g_kk = cm.select_rows(k.iter()).select_columns(k.iter());
    let g_mm = cm.select_rows(m.iter()).select_columns(m.iter()) + DMatrix::identity(m.len(), m.len());
    let g_km = cm.select_rows(k.iter()).select_columns(m.iter());
    let inv = g_mm.try_inverse().unwrap();
    (g_kk - &g_km * inv * g_km.transpose(), keep)
}

fn sub(cm: &DMatrix<f64>, modes: &[usize]) -> DMatrix<f64> {
    let q: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
    cm.select_rows(q.iter()).select_columns(q.iter())
}

fn oracle_holevo(sys: &GaussianSystem, user: usize) -> f64 {
    let cm = sys.cm();
    let bob = sys.mode_of(ModeRole::Bob(user)).unwrap();
    let others: Vec<usize> = sys.bob_modes().into_iter().map(|(_, m)| m).filter(|&m| m != bob).collect();
    let dets = sys.detector_modes();
    let alice = sys.mode_of(ModeRole::Alice).unwrap();

    let (c1, keep1) = joint_condition(cm, &others);
    let pos = |keep: &[usize], m: usize| keep.iter().position(|&k| k == m).unwrap();
    let mut set1 = vec![pos(&keep1, alice), pos(&keep1, bob)];
    set1.extend(dets.iter().map(|&d| pos(&keep1, d)));
    let s1 = entropy_eig(&sub(&c1, &set1));

    let mut all = others.clone();
    all.push(bob);
    let (c2, keep2) = joint_condition(cm, &all);
    let mut set2 = vec![pos(&keep2, alice)];
    set2.extend(dets.iter().map(|&d| pos(&keep2, d)));
    let s2 = entropy_eig(&sub(&c2, &set2));
    s1 - s2
}

#[test]
fn holevo_matches_joint_conditioning_oracle() {
    for (n, km) in [(4, 25.0), (2, 0.0), (3, 60.0), (8, 10.0)] {
        let sys = build_network_state(&NetworkScenario::practical(n, km)).unwrap();
        for i in 0..n {
            let got = holevo_conditional(&sys, i).unwrap();
            let want = oracle_holevo(&sys, i);
            assert!((got - want).abs() < 1e-8, "N={n} L={km} user {i}: {got} vs {want}");
        }
    }
}

#[test]
fn holevo_oracle_on_asymmetric_network() {
    let mut scn = NetworkScenario::practical(3, 18.0);
    scn.users[0].ratio = 0.5;
    scn.users[1].ratio = 0.3;
    scn.users[2].ratio = 0.2;
    scn.users[1].drop_km = 3.0;
    scn.users[2].drop_excess_noise = 0.01;
    scn.users[2].detector = DetectorParams::new(0.8, 0.02).unwrap();
    let sys = build_network_state(&scn).unwrap();
    for i in 0..3 {
        assert!((holevo_conditional(&sys, i).unwrap() - oracle_holevo(&sys, i)).abs() < 1e-8);
    }
}

#[test]
fn joint_limit_matches_oracle() {
    let scn = NetworkScenario::practical(4, 25.0);
    let sys = build_network_state(&scn).unwrap();
    let cm = sys.cm();
    let bobs: Vec<usize> = sys.bob_modes().into_iter().map(|(_, m)| m).collect();

    // I(a : b_1..b_N) from outcome covariance determinants via LU.
    let n = cm.nrows();
    let sigma = (cm + DMatrix::identity(n, n)) * 0.5;
    let a = sub(&sigma, &[0]);
    let b = sub(&sigma, &bobs);
    let mut ab_modes = vec![0];
    ab_modes.extend(&bobs);
    let ab = sub(&sigma, &ab_modes);
    let mi = 0.5 * (a.determinant() * b.determinant() / ab.determinant()).log2();

    let (c, keep) = joint_condition(cm, &bobs);
    let rest: Vec<usize> = (0..keep.len()).collect();
    let holevo = entropy_eig(cm) - entropy_eig(&sub(&c, &rest));
    let want = scn.beta * mi - holevo;
    assert_relative_eq!(upper_limit_joint(&sys, scn.beta).unwrap(), want, max_relative = 1e-8);

    let rep = key_rate_total(&sys, scn.beta).unwrap();
    assert_relative_eq!(rep.k_ub, want, max_relative = 1e-8);
}

#[test]
fn optimizer_matches_dense_grid_scan() {
    use cvqkd::keyrate::{network_report, optimize_modulation_variance};
    use rayon::prelude::*;
    for (n, km) in [(4, 30.0), (1, 50.0), (8, 20.0)] {
        let scn = NetworkScenario::practical(n, km);
        let grid: Vec<f64> = (0..=790).map(|k| 0.5 + 0.05 * k as f64).collect();
        let rates: Vec<f64> = grid
            .par_iter()
            .map(|&vm| {
                let mut s = scn.clone();
                s.source_variance = vm + 1.0;
                network_report(&s).unwrap().k_tot
            })
            .collect();
        let best = (0..grid.len()).max_by(|&a, &b| rates[a].total_cmp(&rates[b])).unwrap();
        // One interior maximum: rising before it, falling after it.
        assert!(rates[..=best].windows(2).all(|w| w[1] >= w[0]));
        assert!(rates[best..].windows(2).all(|w| w[1] <= w[0]));
        let opt = optimize_modulation_variance(&scn, scn.beta, 0.5, 40.0).unwrap();
        assert!(!opt.saturated);
        assert!((opt.modulation_variance - grid[best]).abs() <= 0.05 + 1e-3, "N={n} L={km}: {} vs {}", opt.modulation_variance, grid[best]);
    }
}
