//! The experiments behind each subcommand. Every command returns its artifacts
//! in memory so nothing is written when a run fails.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};
use voltheta::bsde::{feynman_kac_check, solve_lsmc, BSDEProblem, Discounted, PolynomialBasis, TerminalFn};
use voltheta::diagnostics::{covariance_check, freeze_rate, moment_scan, two_time_scaling};
use voltheta::fito::{refinement_study, singular_pairing, FDConfig, FdScheme, PairingKind, SingularWeightIntegral};
use voltheta::gauss::{eval_tilde_u, FuturePart, GaussFunctional, LinearProblem, Payoff};
use voltheta::io::{write_columns, write_ensemble_csv};
use voltheta::kernel::{Coefficients, History};
use voltheta::path::Path;
use voltheta::quadrature::adaptive_gl;
use voltheta::rng::derive_seed;
use voltheta::roughvol::{
    graded_horizons, hat_to_theta, hedge_experiment, price_claim, theta_to_hat, theta_to_hat_series, Claim, HedgeConfig,
    Model, NestedConfig, ObservedState, PricingMethod, Scheme,
};
use voltheta::simulate::{simulate_ensemble, theta_field};
use voltheta::special::{bs_call, bs_put, mittag_leffler};
use voltheta::stats::MeanSe;

use crate::scenario::{claim, payoff, Command, DiffusionForm, Driver, ItoFunctional, Validated};

/// Files (name, bytes), scalar metrics and a JSON report.
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub metrics: BTreeMap<String, f64>,
    pub report: Value,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { files: Vec::new(), metrics: BTreeMap::new(), report: Value::Null }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    fn csv(&mut self, name: &str, headers: &[&str], columns: &[&[f64]]) -> Result<(), String> {
        let mut buf = Vec::new();
        write_columns(&mut buf, headers, columns).map_err(num)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }
}

fn num(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn run(v: &Validated) -> Result<Artifacts, String> {
    match v.command {
        Command::Simulate => simulate(v),
        Command::VerifyIto => verify_ito(v),
        Command::SolveLinear => solve_linear(v),
        Command::SolveBsde => solve_bsde(v),
        Command::Price => price(v),
        Command::Hedge => hedge(v),
        Command::Diagnose => diagnose(v),
    }
}

fn gauss_functional(v: &Validated) -> Result<GaussFunctional, String> {
    let s = &v.scenario;
    let (g, f) = payoff(s)?;
    let kernel = v.kernel_section()?.kernel(v.base_dir.as_deref())?;
    let horizon = s.grid()?.horizon;
    Ok(GaussFunctional::new(LinearProblem::new(g, f, kernel, horizon).map_err(num)?))
}

fn simulate(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let n = s.paths()?;
    let mut out = Artifacts::new();
    let Some(model) = s.model else {
        let k = v.kernel_section()?;
        let coeff = k.coefficients(v.base_dir.as_deref())?;
        let e = simulate_ensemble(&coeff, grid, n, s.seed).map_err(num)?;
        let mut buf = Vec::new();
        write_ensemble_csv(&e, &mut buf).map_err(num)?;
        out.files.push(("paths.csv".into(), buf));
        let terminal: Vec<f64> = (0..n).map(|p| e.state(p, grid.n_steps)[0]).collect();
        let m = MeanSe::of(&terminal);
        out.metric("terminal_mean", m.mean);
        out.metric("terminal_var", m.std * m.std);
        out.metric("mean_t_stat", m.t_stat(k.x0));
        out.report = json!({ "terminal": m });
        return Ok(out);
    };
    let scheme = Scheme::new(model, grid).map_err(num)?;
    let paths = scheme.simulate(n, s.seed).map_err(num)?;
    let e = &paths.ensemble;
    let mut buf = Vec::new();
    write_ensemble_csv(e, &mut buf).map_err(num)?;
    out.files.push(("paths.csv".into(), buf));
    let mid = grid.n_steps / 2;
    let curve = scheme.forward_curve(e, 0, mid).map_err(num)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).map_err(num)?;
    out.files.push(("forward_curve.csv".into(), buf));
    let stock: Vec<f64> = (0..n).map(|p| e.state(p, grid.n_steps)[0]).collect();
    let sm = MeanSe::of(&stock);
    out.metric("stock_mean_t_stat", sm.t_stat(model.s0()));
    out.metric("cap_hits", paths.cap_hits as f64);
    let mut report = json!({ "terminal_stock": sm, "cap_hits": paths.cap_hits });
    match model {
        Model::Heston(p) => {
            let hat = theta_to_hat(&p, &curve.horizons, &curve.theta_values).map_err(num)?;
            let back = hat_to_theta(&p, &curve.horizons, &hat).map_err(num)?;
            let round_trip = curve.theta_values.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            // Θ is piecewise linear between grid nodes for both transform routes
            let graded = graded_horizons(curve.anchor_time, grid.horizon, 800, 2.0 / p.alpha());
            let theta: Vec<f64> = graded.iter().map(|&x| interpolate(&curve.horizons, &curve.theta_values, x)).collect();
            let series_rel = match (theta_to_hat(&p, &graded, &theta), theta_to_hat_series(&p, &graded, &theta)) {
                (Ok(a), Ok(b)) => a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / y.abs().max(f64::MIN_POSITIVE))),
                _ => f64::NAN,
            };
            out.metric("transform_round_trip", round_trip);
            out.metric("transform_series_rel", series_rel);
            out.csv("transform.csv", &["s", "theta", "hat_continuous", "theta_round_trip"], &[&curve.horizons, &curve.theta_values, &hat, &back])?;
            report["transform"] = json!({ "anchor_time": curve.anchor_time, "round_trip_max_abs": round_trip, "series_max_rel": series_rel });
        }
        Model::Bergomi(p) => {
            let var: Vec<f64> = (0..n).map(|q| e.state(q, grid.n_steps)[1]).collect();
            let vm = MeanSe::of(&var);
            out.metric("variance_mean_t_stat", vm.t_stat(p.v0));
            report["terminal_variance"] = json!(vm);
        }
    }
    out.report = report;
    Ok(out)
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&a| a <= x).clamp(1, xs.len() - 1);
    let (a, b) = (xs[j - 1], xs[j]);
    let w = if b > a { ((x - a) / (b - a)).clamp(0.0, 1.0) } else { 1.0 };
    ys[j - 1] + w * (ys[j] - ys[j - 1])
}

fn verify_ito(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let ito = s.ito.clone().unwrap_or_default();
    let coeff = v.kernel_section()?.coefficients(v.base_dir.as_deref())?;
    let gauss;
    let singular = SingularWeightIntegral::new(|x| x);
    let u: &dyn voltheta::fito::Functional = match ito.functional {
        ItoFunctional::Gauss => {
            gauss = gauss_functional(v)?;
            &gauss
        }
        ItoFunctional::SingularWeight => &singular,
    };
    let mut out = Artifacts::new();
    let mut report = json!({});
    if !ito.factors.is_empty() {
        let fine = simulate_ensemble(&coeff, grid, s.paths()?, s.seed).map_err(num)?;
        let r = refinement_study(u, &coeff, &fine, &ito.factors).map_err(num)?;
        out.metric("fitted_order", r.fit.slope);
        out.metric("fit_r_squared", r.fit.r_squared);
        out.metric("rms_finest", *r.rms_mismatch.last().expect("two grids"));
        let sizes: Vec<f64> = r.grid_sizes.iter().map(|&n| n as f64).collect();
        let dts: Vec<f64> = r.certificates.iter().map(|c| c.dt).collect();
        let means: Vec<f64> = r.certificates.iter().map(|c| c.mean).collect();
        out.csv("ito_refinement.csv", &["n_steps", "dt", "rms_mismatch", "mean_mismatch"], &[&sizes, &dts, &r.rms_mismatch, &means])?;
        report["refinement"] = serde_json::to_value(&r).map_err(num)?;
    }
    if let Some(p) = ito.pairing {
        let e = simulate_ensemble(&coeff, grid, 1, derive_seed(s.seed, &[1])).map_err(num)?;
        let cfg = FDConfig::new(Some(1e-4), 1e-4, FdScheme::Central).map_err(num)?;
        let t = p.at * grid.horizon;
        let sp = singular_pairing(u, t, &e.path(0), &coeff, PairingKind::Diffusion { column: 0 }, p.levels[0]..=p.levels[1], &cfg, false)
            .map_err(num)?;
        out.metric("pairing_rate", sp.observed_rate);
        out.metric("pairing_r_squared", sp.r_squared);
        out.csv("pairing.csv", &["delta", "value"], &[&sp.deltas, &sp.values])?;
        report["pairing"] = serde_json::to_value(&sp).map_err(num)?;
    }
    out.report = report;
    Ok(out)
}

fn solve_linear(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let n = s.paths()?;
    let k = v.kernel_section()?;
    let coeff = k.coefficients(v.base_dir.as_deref())?;
    let u = gauss_functional(v)?;
    let anchors: Vec<usize> = s
        .linear
        .clone()
        .unwrap_or_default()
        .anchors
        .iter()
        .map(|a| ((a * grid.n_steps as f64).round() as usize).clamp(1, grid.n_steps - 1))
        .collect();
    let e = simulate_ensemble(&coeff, grid, n, s.seed).map_err(num)?;
    let u0 = u.eval_u(0.0, &Path::constant(grid.nodes(), &[k.x0])).map_err(num)?;
    let markov = u.problem.running.is_zero();
    let tu0 = if markov { eval_tilde_u(&u.problem, 0.0, k.x0).map_err(num)? } else { 0.0 };
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let field = theta_field(&e, &coeff, p).map_err(num)?;
            let mut row = Vec::with_capacity(2 * anchors.len());
            for &i in &anchors {
                row.push(u.eval_concat(&field.concat(i)).map_err(num)?);
            }
            if markov {
                for &i in &anchors {
                    row.push(eval_tilde_u(&u.problem, grid.time(i), e.state(p, i)[0]).map_err(num)?);
                }
            }
            Ok(row)
        })
        .collect::<Result<_, String>>()?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let times: Vec<f64> = anchors.iter().map(|&i| grid.time(i)).collect();
    let mut u_stats = Vec::new();
    let mut tilde_stats = Vec::new();
    for c in 0..anchors.len() {
        u_stats.push(MeanSe::of(&column(c)));
        if markov {
            tilde_stats.push(MeanSe::of(&column(anchors.len() + c)));
        }
    }
    let mut out = Artifacts::new();
    let u_t: Vec<f64> = u_stats.iter().map(|m| m.t_stat(u0)).collect();
    out.metric("u0", u0);
    out.metric("u_drift_max_abs_t", u_t.iter().fold(0.0f64, |m, t| m.max(t.abs())));
    let mut headers: Vec<String> = times.iter().map(|t| format!("u_t{t}")).collect();
    let mut cols: Vec<Vec<f64>> = (0..anchors.len()).map(column).collect();
    let mut report = json!({ "u0": u0, "times": times, "u_mean": u_stats, "u_drift_t": u_t });
    if markov {
        let tilde_t: Vec<f64> = tilde_stats.iter().map(|m| m.t_stat(tu0)).collect();
        out.metric("markov_drift_min_abs_t", tilde_t.iter().fold(f64::INFINITY, |m, t| m.min(t.abs())));
        headers.extend(times.iter().map(|t| format!("markov_t{t}")));
        cols.extend((0..anchors.len()).map(|c| column(anchors.len() + c)));
        report["markov_u0"] = json!(tu0);
        report["markov_mean"] = json!(tilde_stats);
        report["markov_drift_t"] = json!(tilde_t);
    }
    let h: Vec<&str> = headers.iter().map(String::as_str).collect();
    let c: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    out.csv("values.csv", &h, &c)?;
    out.report = report;
    Ok(out)
}

fn terminal_fn(g: Payoff) -> TerminalFn {
    Arc::new(move |h: &History<'_>| g.value(h.current()[0]))
}

fn solve_bsde(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let k = v.kernel_section()?;
    let b = s.bsde.clone().unwrap_or_default();
    let (g, _) = payoff(s)?;
    let coeff: Arc<dyn Coefficients> = Arc::new(k.coefficients(v.base_dir.as_deref())?);
    let problem = match b.driver {
        Driver::Zero => BSDEProblem::conditional_expectation(coeff.clone(), terminal_fn(g.clone())),
        Driver::Discounted => BSDEProblem::discounted(coeff.clone(), terminal_fn(g.clone()), b.rate).map_err(num)?,
    };
    let e = simulate_ensemble(coeff.as_ref(), grid, s.paths()?, s.seed).map_err(num)?;
    let sol = solve_lsmc(&problem, &e, &PolynomialBasis { degree: b.degree }, &b.theta_columns).map_err(num)?;
    let mut out = Artifacts::new();
    out.metric("y0", sol.y0);
    out.metric("y0_se", sol.se);
    let times = grid.nodes();
    let y_mean: Vec<f64> = (0..=grid.n_steps).map(|i| (0..e.path_count).map(|p| sol.y(p, i)).sum::<f64>() / e.path_count as f64).collect();
    out.csv("y_mean.csv", &["t", "y_mean"], &[&times, &y_mean])?;
    let discount = (-b.rate * grid.horizon).exp();
    let mut report = json!({ "y0": sol.y0, "se": sol.se, "basis": sol.basis_spec, "warnings": sol.warnings });
    if v.bsde_oracle_available() {
        let oracle = match k.diffusion {
            DiffusionForm::Additive => discount * gauss_functional(v)?.eval_u(0.0, &Path::constant(times.clone(), &[k.x0])).map_err(num)?,
            DiffusionForm::Geometric => {
                let w = k.volatility * k.volatility * grid.horizon;
                let strike = s.payoff.as_ref().and_then(|p| p.strike).unwrap_or(0.0);
                discount * if s.payoff.as_ref().is_some_and(|p| p.kind == "call") { bs_call(k.x0, strike, w) } else { bs_put(k.x0, strike, w) }
            }
        };
        out.metric("oracle", oracle);
        out.metric("oracle_rel_error", (sol.y0 - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE));
        out.metric("oracle_abs_z", (sol.y0 - oracle).abs() / sol.se);
        report["oracle"] = json!(oracle);
    }
    if b.check_paths > 0 {
        if k.diffusion != DiffusionForm::Additive || !v.bsde_oracle_available() {
            return Err("bsde.check_paths: the residual check needs the Gaussian closed form".into());
        }
        let u = gauss_functional(v)?;
        let check = simulate_ensemble(coeff.as_ref(), grid, b.check_paths, derive_seed(s.seed, &[1])).map_err(num)?;
        let fk = match b.driver {
            Driver::Zero => feynman_kac_check(&problem, &FuturePart(&u), &check),
            Driver::Discounted => feynman_kac_check(&problem, &Discounted { inner: FuturePart(&u), rate: b.rate, horizon: grid.horizon }, &check),
        }
        .map_err(num)?;
        out.metric("residual_abs_t", fk.t_stat.abs());
        report["feynman_kac"] = serde_json::to_value(&fk).map_err(num)?;
    }
    out.report = report;
    Ok(out)
}

fn nested_config(v: &Validated, tag: u64) -> NestedConfig {
    let n = v.scenario.nested.unwrap_or_default();
    NestedConfig {
        inner_paths: n.inner_paths,
        seed: derive_seed(v.scenario.seed, &[tag]),
        method: n.method,
        bump_stock: n.bump_stock,
        bump_fv: n.bump_fv,
        control_variate: n.control_variate,
    }
}

/// Black–Scholes with the deterministic integrated variance.
fn deterministic_variance_price(model: &Model, claim: &Claim, horizon: f64) -> f64 {
    let w = match model {
        Model::Heston(p) => {
            let a = p.alpha();
            let v = |t: f64| p.mean_rev_level + (p.v0 - p.mean_rev_level) * mittag_leffler(a, 1.0, -p.mean_rev_rate * t.powf(a)).0;
            adaptive_gl(0.0, horizon, 1e-12, &v).0
        }
        Model::Bergomi(p) => p.v0 * horizon,
    };
    let s0 = model.s0();
    match claim {
        Claim::Call { strike } => bs_call(s0, *strike, w),
        Claim::Put { strike } => bs_put(s0, *strike, w),
        _ => s0,
    }
}

fn price(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let model = s.model()?;
    let claim = claim(s)?;
    let scheme = Scheme::new(model, grid).map_err(num)?;
    let state = ObservedState::initial(&scheme);
    let cfg = nested_config(v, 0);
    let est = price_claim(&scheme, &claim, &state, &cfg).map_err(num)?;
    let mut out = Artifacts::new();
    out.metric("price", est.price);
    out.metric("price_se", est.se);
    let mut report = json!({ "estimate": est, "method": cfg.method });
    if v.price_oracle_available() {
        let oracle = deterministic_variance_price(&model, &claim, grid.horizon);
        out.metric("oracle", oracle);
        out.metric("oracle_abs_z", (est.price - oracle).abs() / est.se);
        report["oracle"] = json!(oracle);
    }
    if s.price.is_some_and(|p| p.cross_check) {
        let other = match cfg.method {
            PricingMethod::MonteCarlo => PricingMethod::Mixing,
            PricingMethod::Mixing => PricingMethod::MonteCarlo,
        };
        let alt = price_claim(&scheme, &claim, &state, &NestedConfig { method: other, ..nested_config(v, 1) }).map_err(num)?;
        let z = (est.price - alt.price).abs() / (est.se * est.se + alt.se * alt.se).sqrt();
        out.metric("cross_check_abs_z", z);
        report["cross_check"] = json!({ "method": other, "estimate": alt });
    }
    out.csv("price.csv", &["price", "se", "n_paths"], &[&[est.price], &[est.se], &[est.n_paths as f64]])?;
    out.report = report;
    Ok(out)
}

fn hedge(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let model = s.model()?;
    let claim = claim(s)?;
    let h = s.hedge.clone().unwrap_or_default();
    let scheme = Scheme::new(model, grid).map_err(num)?;
    let mut out = Artifacts::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &dates in &h.rebalance_dates {
        let cfg = HedgeConfig {
            rebalance_dates: dates,
            outer_paths: h.outer_paths,
            seed: s.seed,
            nested: nested_config(v, 0),
            initial_price_paths: h.initial_price_paths,
            max_work: h.max_work,
        };
        let c = hedge_experiment(&scheme, &claim, &cfg).map_err(num)?;
        for (name, r) in [("unhedged", &c.unhedged), ("stock_only", &c.stock_only), ("stock_and_fv", &c.stock_and_fv)] {
            let mut buf = Vec::new();
            r.write_pnl_csv(&mut buf).map_err(num)?;
            out.files.push((format!("pnl_{name}_{dates}.csv"), buf));
        }
        let checks = (h.outer_paths * dates) as f64;
        rows.push((dates, c.unhedged.summary.std, c.stock_only.summary.std, c.stock_and_fv.summary.std, c.stock_and_fv.unstable_ratios as f64 / checks));
        runs.push(json!({
            "rebalance_dates": dates,
            "initial_price": c.stock_and_fv.initial_price,
            "unhedged": c.unhedged.summary,
            "stock_only": c.stock_only.summary,
            "stock_and_fv": c.stock_and_fv.summary,
            "unstable_ratios": c.stock_and_fv.unstable_ratios,
            "cap_hits": c.stock_and_fv.cap_hits,
        }));
    }
    let reference = h.reference_dates.unwrap_or(h.rebalance_dates[h.rebalance_dates.len() / 2]);
    let r = rows.iter().find(|r| r.0 == reference).expect("validated reference");
    out.metric("std_unhedged", r.1);
    out.metric("std_stock_only", r.2);
    out.metric("std_stock_and_fv", r.3);
    out.metric("fv_to_stock_ratio", r.3 / r.2);
    out.metric("stock_to_unhedged_ratio", r.2 / r.1);
    out.metric("unstable_fraction", r.4);
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.0);
    let monotone = sorted.windows(2).all(|w| w[1].2 <= w[0].2 && w[1].3 <= w[0].3);
    out.metric("monotone_in_dates", f64::from(u8::from(monotone)));
    let dates: Vec<f64> = sorted.iter().map(|r| r.0 as f64).collect();
    let un: Vec<f64> = sorted.iter().map(|r| r.1).collect();
    let so: Vec<f64> = sorted.iter().map(|r| r.2).collect();
    let sf: Vec<f64> = sorted.iter().map(|r| r.3).collect();
    out.csv("hedge_std.csv", &["rebalance_dates", "std_unhedged", "std_stock_only", "std_stock_and_fv"], &[&dates, &un, &so, &sf])?;
    out.report = json!({ "reference_dates": reference, "runs": runs });
    Ok(out)
}

fn diagnose(v: &Validated) -> Result<Artifacts, String> {
    let s = &v.scenario;
    let grid = s.grid()?;
    let n = s.paths()?;
    let d = s.diagnose.clone().unwrap_or_default();
    let k = v.kernel_section()?;
    let kernel = k.kernel(v.base_dir.as_deref())?;
    let coeff = k.coefficients(v.base_dir.as_deref())?;
    let mut out = Artifacts::new();
    let mut report = json!({});
    let e = simulate_ensemble(&coeff, grid, n, s.seed).map_err(num)?;
    if d.two_time {
        let base = grid.n_steps / 4;
        let pairs: Vec<(usize, usize)> =
            (0..).map(|j| 1usize << j).take_while(|&l| l <= 32 && base + l <= grid.n_steps).map(|l| (base, base + l)).collect();
        let r = two_time_scaling(&e, &coeff, &pairs).map_err(num)?;
        out.metric("two_time_slope", r.fit.slope);
        out.metric("two_time_r_squared", r.fit.r_squared);
        let m: Vec<f64> = r.moments.iter().map(|m| m.mean).collect();
        out.csv("two_time.csv", &["gap", "moment"], &[&r.scales, &m])?;
        report["two_time"] = serde_json::to_value(&r).map_err(num)?;
    }
    if !d.freeze_levels.is_empty() {
        let r = freeze_rate(&e, &coeff, &d.freeze_levels).map_err(num)?;
        out.metric("freeze_slope", r.fit.slope);
        out.metric("freeze_r_squared", r.fit.r_squared);
        let m: Vec<f64> = r.moments.iter().map(|m| m.mean).collect();
        out.csv("freeze.csv", &["level", "moment"], &[&r.scales, &m])?;
        report["freeze"] = serde_json::to_value(&r).map_err(num)?;
    }
    if d.covariance {
        let r = covariance_check(&kernel, grid, n, derive_seed(s.seed, &[1])).map_err(num)?;
        out.metric("covariance_max_abs_t", r.max_t_stat);
        report["covariance"] = serde_json::to_value(&r).map_err(num)?;
    }
    if !d.moment_grids.is_empty() {
        let r = moment_scan(&coeff, grid.horizon, &d.moment_grids, n, derive_seed(s.seed, &[2])).map_err(num)?;
        out.metric("moments_diverged", f64::from(u8::from(r.diverged)));
        report["moments"] = serde_json::to_value(&r).map_err(num)?;
    }
    out.report = report;
    Ok(out)
}
