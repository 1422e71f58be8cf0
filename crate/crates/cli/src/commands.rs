use std::path::PathBuf;

use cvqkd::channels::{build_network_state, canonical_roles, NetworkScenario};
use cvqkd::estimator::{estimate_covariance, estimate_from_outcome_covariance, sample_outcomes, CovarianceEstimate};
use cvqkd::gaussian::GaussianSystem;
use cvqkd::keyrate::{bits_per_second, key_rate_total, network_report, optimize_modulation_variance, outcome_covariance, KeyRateReport};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::output::{num, opt, write_file, Table};
use crate::{CliError, GlobalOpts};

pub const NETWORK_SCHEMA: &str = "cvqkd-network/1";
pub const SWEEP_SCHEMA: &str = "cvqkd-sweep/1";
pub const OPTIMIZE_SCHEMA: &str = "cvqkd-optimize/1";
pub const BPS_SCHEMA: &str = "cvqkd-bps/1";
pub const MONTECARLO_SCHEMA: &str = "cvqkd-montecarlo/1";
pub const COVARIANCE_SCHEMA: &str = "cvqkd-covariance/1";

const DEFAULT_SEED: u64 = 1;
const DEFAULT_SAMPLES: usize = 1_000_000;

fn out_path(cfg: &ScenarioConfig, opts: &GlobalOpts) -> Option<PathBuf> {
    opts.out.clone().or_else(|| cfg.run.output.clone())
}

fn describe(t: &mut Table, scn: &NetworkScenario) {
    t.meta("users", scn.n_users())
        .meta("feeder_km", scn.feeder_km)
        .meta("modulation_variance", scn.modulation_variance())
        .meta("beta", scn.beta);
}

pub fn network(cfg: &ScenarioConfig, opts: &GlobalOpts) -> Result<(), CliError> {
    let scn = cfg.scenario(None, None)?;
    let rep = network_report(&scn)?;
    let mut t = Table::new(NETWORK_SCHEMA, &["quantity", "user", "value"]);
    t.meta("command", "network");
    describe(&mut t, &scn);
    for u in &rep.users {
        let user = (u.user + 1).to_string();
        for (q, v) in [
            ("mi_ab", u.mi_ab),
            ("mi_rest", u.mi_rest),
            ("holevo_cond", u.holevo_cond),
            ("k_user_raw", u.k_raw),
            ("k_user", u.k_clamped),
            ("k_lb", u.k_lb),
        ] {
            t.row(vec![q.into(), user.clone(), num(v)]);
        }
    }
    for (q, v) in [
        ("k_tot", Some(rep.k_tot)),
        ("k_ub", Some(rep.k_ub)),
        ("k_ub_p2p", rep.k_ub_p2p),
        ("k_lb_sum", Some(rep.k_lb)),
        ("ratio", rep.ratio),
    ] {
        t.row(vec![q.into(), String::new(), opt(v)]);
    }
    t.emit(out_path(cfg, opts).as_deref(), !opts.no_timestamp)?;
    eprint!("{}", summary(&scn, &rep));
    Ok(())
}

fn summary(scn: &NetworkScenario, rep: &KeyRateReport) -> String {
    let mut s = format!(
        "{} users, feeder {} km, V_M = {}, beta = {}\n",
        scn.n_users(),
        scn.feeder_km,
        scn.modulation_variance(),
        scn.beta
    );
    for u in &rep.users {
        s += &format!(
            "  user {:>3}: K = {:.4e}  (I_ab {:.4}, I_rest {:.4}, chi {:.4}, K_LB {:.4e})\n",
            u.user + 1,
            u.k_clamped,
            u.mi_ab,
            u.mi_rest,
            u.holevo_cond,
            u.k_lb
        );
    }
    s += &format!("  K_tot = {:.4e}, K_UB = {:.4e}", rep.k_tot, rep.k_ub);
    if let Some(r) = rep.ratio {
        s += &format!(", K_tot/K_UB = {r:.3}");
    }
    s + "\n"
}

/// A user count and feeder length; `None` keeps the scenario's own value.
type GridPoint = (Option<usize>, Option<f64>);

/// Points in grid order: user counts outer, distances inner.
fn grid(cfg: &ScenarioConfig) -> Result<Vec<GridPoint>, CliError> {
    let distances: Vec<Option<f64>> = match cfg.distances()? {
        Some(d) => d.into_iter().map(Some).collect(),
        None => vec![None],
    };
    Ok(cfg
        .user_grid()
        .into_iter()
        .flat_map(|n| distances.iter().map(move |&d| (n, d)))
        .collect())
}

pub fn sweep(cfg: &ScenarioConfig, opts: &GlobalOpts) -> Result<(), CliError> {
    let points = grid(cfg)?;
    let rows = points
        .par_iter()
        .map(|&(n, d)| {
            let scn = cfg.scenario(n, d)?;
            let rep = network_report(&scn)?;
            let min = |f: fn(&cvqkd::UserRate) -> f64| rep.users.iter().map(f).fold(f64::INFINITY, f64::min);
            let max = rep.users.iter().map(|u| u.k_clamped).fold(f64::NEG_INFINITY, f64::max);
            Ok(vec![
                scn.n_users().to_string(),
                num(scn.feeder_km),
                num(min(|u| u.k_clamped)),
                num(max),
                num(rep.k_tot),
                num(rep.k_ub),
                opt(rep.k_ub_p2p),
                num(min(|u| u.k_lb)),
                num(rep.k_lb),
                opt(rep.ratio),
            ])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut t = Table::new(
        SWEEP_SCHEMA,
        &["users", "distance_km", "k_user_min", "k_user_max", "k_tot", "k_ub", "k_ub_p2p", "k_lb_min", "k_lb_sum", "ratio"],
    );
    t.meta("command", "sweep");
    rows.into_iter().for_each(|r| t.row(r));
    t.emit(out_path(cfg, opts).as_deref(), !opts.no_timestamp)
}

pub fn optimize(cfg: &ScenarioConfig, opts: &GlobalOpts) -> Result<(), CliError> {
    let (lo, hi) = cfg.vm_bounds();
    let rows = grid(cfg)?
        .par_iter()
        .map(|&(n, d)| {
            let scn = cfg.scenario(n, d)?;
            let o = optimize_modulation_variance(&scn, scn.beta, lo, hi)?;
            Ok(vec![
                scn.n_users().to_string(),
                num(scn.feeder_km),
                num(scn.beta),
                num(o.modulation_variance),
                num(o.k_tot),
                o.saturated.to_string(),
                o.evaluations.to_string(),
            ])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut t = Table::new(
        OPTIMIZE_SCHEMA,
        &["users", "distance_km", "beta", "vm_opt", "k_tot", "saturated", "evaluations"],
    );
    t.meta("command", "optimize").meta("vm_lower", lo).meta("vm_upper", hi);
    rows.into_iter().for_each(|r| t.row(r));
    t.emit(out_path(cfg, opts).as_deref(), !opts.no_timestamp)
}

pub fn bps(cfg: &ScenarioConfig, opts: &GlobalOpts) -> Result<(), CliError> {
    let baud = cfg
        .run
        .baud
        .ok_or_else(|| CliError::config("run.baud is required for bps"))?;
    let overhead = cfg.run.overhead.unwrap_or(0.0);
    let rates = match &cfg.run.rates {
        Some(r) => r.clone(),
        None => {
            let rep = network_report(&cfg.scenario(None, None)?)?;
            rep.users.iter().map(|u| u.k_clamped).collect()
        }
    };
    let mut t = Table::new(BPS_SCHEMA, &["user", "k", "bps", "mbps"]);
    t.meta("command", "bps").meta("baud", baud).meta("overhead", overhead);
    let mut total = 0.0;
    for (i, &k) in rates.iter().enumerate() {
        let b = bits_per_second(k, baud, overhead)?;
        total += b;
        t.row(vec![(i + 1).to_string(), num(k), num(b), format!("{:.2}", b / 1e6)]);
    }
    let k_sum: f64 = rates.iter().sum();
    t.row(vec!["total".into(), num(k_sum), num(total), format!("{:.2}", total / 1e6)]);
    t.emit(out_path(cfg, opts).as_deref(), !opts.no_timestamp)
}

fn labels(sys: &GaussianSystem) -> Vec<String> {
    sys.roles()
        .iter()
        .flat_map(|r| [format!("{r}_x"), format!("{r}_p")])
        .collect()
}

fn matrix_table(what: &str, labels: &[String], at: impl Fn(usize, usize) -> f64) -> Table {
    let mut header = vec!["row"];
    header.extend(labels.iter().map(String::as_str));
    let mut t = Table::new(COVARIANCE_SCHEMA, &header);
    t.meta("matrix", what);
    for (i, l) in labels.iter().enumerate() {
        let mut r = vec![l.clone()];
        r.extend((0..labels.len()).map(|j| num(at(i, j))));
        t.row(r);
    }
    t
}

fn rel_diff(theory: f64, estimate: f64) -> f64 {
    if theory == 0.0 {
        estimate.abs()
    } else {
        (estimate - theory) / theory.abs()
    }
}

pub fn montecarlo(cfg: &ScenarioConfig, opts: &GlobalOpts, theory_flag: bool) -> Result<(), CliError> {
    let dir = out_path(cfg, opts)
        .ok_or_else(|| CliError::config("montecarlo needs an output directory (--out or run.output)"))?;
    let scn = cfg.scenario(None, None)?;
    let n = scn.n_users();
    let dets: Vec<_> = scn.users.iter().map(|u| u.detector).collect();
    let seed = opts.seed.or(cfg.run.seed).unwrap_or(DEFAULT_SEED);
    let samples = cfg.run.samples.unwrap_or(DEFAULT_SAMPLES);
    let theory_mode = theory_flag || cfg.run.theory_shortcut.unwrap_or(false);
    let stamp = !opts.no_timestamp;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;

    let truth = build_network_state(&scn)?;
    let est: CovarianceEstimate = if theory_mode {
        let sigma = outcome_covariance(&truth, &canonical_roles(n)[..n + 1])?;
        estimate_from_outcome_covariance(&sigma, &dets)?
    } else {
        let data = sample_outcomes(&scn, samples, seed)?;
        data.write_csv(&dir.join("samples.csv"))?;
        estimate_covariance(&data, &dets, scn.source_variance)?
    };

    let lab = labels(&est.system);
    let write = |name: &str, t: &mut Table| -> Result<(), CliError> {
        t.meta("command", "montecarlo").meta("seed", seed);
        write_file(&dir.join(name), &t.render(stamp)?)
    };
    write("covariance.csv", &mut matrix_table("estimate", &lab, |i, j| est.system.cm()[(i, j)]))?;
    write("covariance_theory.csv", &mut matrix_table("theory", &labels(&truth), |i, j| truth.cm()[(i, j)]))?;
    if let Some(se) = &est.standard_errors {
        let pre = labels(&est.pre_detector);
        write("covariance_stderr.csv", &mut matrix_table("standard_error_pre_detector", &pre, |i, j| se[(i, j)]))?;
    }

    let theory = network_report(&scn)?;
    let estimate = key_rate_total(&est.rate_state()?, scn.beta)?;
    let mut t = Table::new(MONTECARLO_SCHEMA, &["quantity", "user", "theory", "estimate", "rel_diff"]);
    describe(&mut t, &scn);
    t.meta("mode", if theory_mode { "theory" } else { "sampled" })
        .meta("samples", if theory_mode { 0 } else { samples })
        .meta("physical", est.physical)
        .meta("rates_on", if est.physical { "estimate" } else { "physical_projection" });
    let mut row = |q: &str, user: String, a: f64, b: f64| {
        t.row(vec![q.into(), user, num(a), num(b), num(rel_diff(a, b))]);
    };
    for (a, b) in theory.users.iter().zip(&estimate.users) {
        let user = (a.user + 1).to_string();
        row("mi_ab", user.clone(), a.mi_ab, b.mi_ab);
        row("holevo_cond", user.clone(), a.holevo_cond, b.holevo_cond);
        row("k_user", user, a.k_clamped, b.k_clamped);
    }
    row("k_tot", String::new(), theory.k_tot, estimate.k_tot);
    row("k_ub", String::new(), theory.k_ub, estimate.k_ub);
    write("report.csv", &mut t)?;
    eprintln!(
        "K_tot theory {:.4e}, estimate {:.4e} ({:+.2}%), output in {}",
        theory.k_tot,
        estimate.k_tot,
        100.0 * rel_diff(theory.k_tot, estimate.k_tot),
        dir.display()
    );
    Ok(())
}
