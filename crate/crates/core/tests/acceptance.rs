//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed under
//! `cargo test`. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p voltheta --test acceptance -- 8 11`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use voltheta::bsde::{feynman_kac_check, solve_lsmc, BSDEProblem, PolynomialBasis, TerminalFn, DEFAULT_THETA_COLUMNS};
use voltheta::diagnostics::{freeze_rate, two_time_scaling};
use voltheta::fito::{
    refinement_study, right_time_derivative, second_directional, singular_pairing, FDConfig, FdScheme, PairingKind,
    SingularWeightIntegral,
};
use voltheta::gauss::{eval_tilde_u, FuturePart, GaussFunctional, LinearProblem, Payoff, Running};
use voltheta::io::{write_columns, write_ensemble_csv};
use voltheta::kernel::{Coefficients, History, KernelSpec, SeparableCoefficients};
use voltheta::path::{Path, Scalar};
use voltheta::rng::brownian_increments;
use voltheta::roughvol::{
    graded_horizons, hat_to_theta, hedge_experiment, price_claim, theta_to_hat, theta_to_hat_checked, Claim, HedgeConfig,
    NestedConfig, ObservedState, PricingMethod, RoughBergomiParams, RoughHestonParams, Scheme,
};
use voltheta::simulate::{simulate_ensemble, theta_field, PathEnsemble, TimeGrid};
use voltheta::special::{bs_call, mittag_leffler};
use voltheta::stats::MeanSe;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rl(h: f64) -> KernelSpec {
    KernelSpec::riemann_liouville(h).unwrap()
}

fn gaussian(kernel: KernelSpec, x0: f64) -> SeparableCoefficients {
    SeparableCoefficients::gaussian(kernel, x0)
}

fn functional(g: Payoff, f: Running, kernel: KernelSpec) -> GaussFunctional {
    GaussFunctional::new(LinearProblem::new(g, f, kernel, 1.0).unwrap())
}

/// Cell-RMS diffusion weights by lag for a convolution kernel on a uniform grid.
fn lag_weights(kernel: &KernelSpec, grid: TimeGrid) -> Vec<f64> {
    let h = grid.dt();
    let mut w = vec![0.0; grid.n_steps + 1];
    for (m, wm) in w.iter_mut().enumerate().skip(1) {
        *wm = kernel.cell_weights(m as f64 * h, 0.0, h).1;
    }
    w
}

fn trapezoid(h: f64, ys: &[f64]) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    h * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[ys.len() - 1]))
}

// 1. u(t, X⊗Θ^t) against nested Monte Carlo of E[ξ | F_t]
fn c1() -> Outcome {
    let n = 256;
    let inner = 100_000;
    let grid = TimeGrid::new(1.0, n).unwrap();
    let h = grid.dt();
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (hi, &hurst) in [0.3, 0.5, 0.7].iter().enumerate() {
        let kernel = rl(hurst);
        let coeff = gaussian(kernel.clone(), 0.0);
        let w = lag_weights(&kernel, grid);
        for (fi, square) in [false, true].into_iter().enumerate() {
            let running = if square { Running::square() } else { Running::zero() };
            let f = |x: f64| if square { x * x } else { 0.0 };
            let u = functional(Payoff::Call { strike: 0.1 }, running, kernel.clone());
            let outer = simulate_ensemble(&coeff, grid, 1, 100 + (hi * 2 + fi) as u64).unwrap();
            let field = theta_field(&outer, &coeff, 0).unwrap();
            for (ti, i) in [n / 4, n / 2, 3 * n / 4].into_iter().enumerate() {
                let value = u.eval_concat(&field.concat(i)).unwrap();
                let past: Vec<f64> = (0..=i).map(|j| f(outer.state(0, j)[0])).collect();
                let past_integral = trapezoid(h, &past);
                let theta: Vec<f64> = (i..=n).map(|j| field.get(i, j)[0]).collect();
                let m = n - i;
                let seed = 1000 + (hi * 6 + fi * 3 + ti) as u64;
                let xi: Vec<f64> = (0..inner as u64)
                    .into_par_iter()
                    .map(|q| {
                        let dw = brownian_increments(seed, q, m, 1, h);
                        let mut x = theta.clone();
                        for r in 0..m {
                            for j in r + 1..=m {
                                x[j] += w[j - r] * dw[r];
                            }
                        }
                        let fx: Vec<f64> = x.iter().map(|&v| f(v)).collect();
                        past_integral + trapezoid(h, &fx) + (x[m] - 0.1).max(0.0)
                    })
                    .collect();
                let est = MeanSe::of(&xi);
                let z = (value - est.mean) / est.se;
                worst = worst.max(z.abs());
                lines.push(format!("H={hurst} f={} t={:.2}: z={z:+.2}", if square { "x²" } else { "0" }, grid.time(i)));
            }
        }
    }
    outcome(worst < 3.0, format!("max |u − MC|/SE = {worst:.2} over 18 cases (limit 3); {}", lines.join(", ")))
}

// 2. u(t, X⊗Θ^t) is driftless, ũ(t, X_t) is not
fn c2() -> Outcome {
    let n = 64;
    let paths = 100_000;
    let grid = TimeGrid::new(1.0, n).unwrap();
    let kernel = rl(0.3);
    let coeff = gaussian(kernel.clone(), 0.0);
    let u = functional(Payoff::Call { strike: 0.1 }, Running::zero(), kernel.clone());
    let problem = u.problem.clone();
    let e = simulate_ensemble(&coeff, grid, paths, 21).unwrap();
    let u0 = u.eval_u(0.0, &Path::constant(grid.nodes(), &[0.0])).unwrap();
    let tu0 = eval_tilde_u(&problem, 0.0, 0.0).unwrap();
    let anchors = [n / 4, n / 2, 3 * n / 4];
    let rows: Vec<[f64; 6]> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let field = theta_field(&e, &coeff, p).unwrap();
            let mut out = [0.0; 6];
            for (k, &i) in anchors.iter().enumerate() {
                out[k] = u.eval_concat(&field.concat(i)).unwrap() - u0;
                out[3 + k] = eval_tilde_u(&problem, grid.time(i), e.state(p, i)[0]).unwrap() - tu0;
            }
            out
        })
        .collect();
    let t_stats: Vec<f64> = (0..6).map(|c| MeanSe::of(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()).t_stat(0.0)).collect();
    let u_max = t_stats[..3].iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let tilde_min = t_stats[3..].iter().fold(f64::INFINITY, |m, t| m.min(t.abs()));
    outcome(
        u_max < 3.0 && tilde_min > 3.0,
        format!(
            "u drift |t| max {u_max:.2} (limit 3), ũ drift |t| min {tilde_min:.1} (must exceed 3); t-stats u {:?}, ũ {:?}",
            rounded(&t_stats[..3]),
            rounded(&t_stats[3..])
        ),
    )
}

fn rounded(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}

// 3. telescoped functional Itô formula converges with order ≥ 1/2
//
// With g(x) = x² and f = 0 the telescoped mismatch is exactly Σ_m w_m²(ΔW² − Δt)
// over the lag weights w, so its RMS is Δt·(2Σ w_m⁴)^{1/2}. That closed form is
// reported next to the measured order.
fn c3() -> Outcome {
    let fine_n = 512;
    let paths = 1000;
    let factors = [8, 4, 2, 1];
    let grid = TimeGrid::new(1.0, fine_n).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, kernel) in [("RL H=0.3", rl(0.3)), ("Brownian", KernelSpec::constant())] {
        let coeff = gaussian(kernel.clone(), 0.0);
        let u = functional(Payoff::Power { exponent: 2 }, Running::zero(), kernel.clone());
        let fine = simulate_ensemble(&coeff, grid, paths, 31).unwrap();
        let report = refinement_study(&u, &coeff, &fine, &factors).unwrap();
        let exact: Vec<f64> = report
            .grid_sizes
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(1.0, n).unwrap();
                g.dt() * (2.0 * lag_weights(&kernel, g).iter().map(|w| w.powi(4)).sum::<f64>()).sqrt()
            })
            .collect();
        let x: Vec<f64> = report.grid_sizes.iter().map(|&n| -(n as f64).ln()).collect();
        let exact_order = voltheta::stats::SlopeFit::fit(&x, &exact.iter().map(|r| r.ln()).collect::<Vec<_>>()).slope;
        pass &= report.fitted_order >= 0.5;
        parts.push(format!(
            "{name}: order {:.3} (r² {:.3}), closed-form order {exact_order:.3}, rms {:?} vs closed form {:?} on N {:?}",
            report.fitted_order,
            report.fit.r_squared,
            report.rms_mismatch.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>(),
            exact.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>(),
            report.grid_sizes
        ));
    }
    outcome(pass, format!("{} (limit ≥ 0.5, {paths} paths)", parts.join("; ")))
}

// 4. truncated pairings converge at rate H for a functional vanishing diagonally at rate 1/2
fn c4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let u = SingularWeightIntegral::new(|x| x);
    let cfg = FDConfig::new(Some(1e-4), 1e-4, FdScheme::Central).unwrap();
    for hurst in [0.2, 0.3, 0.4] {
        let coeff = gaussian(rl(hurst), 0.0);
        let e = simulate_ensemble(&coeff, TimeGrid::new(1.0, 64).unwrap(), 1, 41).unwrap();
        let omega = e.path(0);
        let sp = singular_pairing(&u, 0.25, &omega, &coeff, PairingKind::Diffusion { column: 0 }, 4..=10, &cfg, false).unwrap();
        let ok = (sp.observed_rate - hurst).abs() <= 0.1 && sp.r_squared >= 0.9;
        pass &= ok;
        parts.push(format!("H={hurst}: rate {:.3}, r² {:.3}", sp.observed_rate, sp.r_squared));
    }
    outcome(pass, format!("{} (limits |rate − H| ≤ 0.1, r² ≥ 0.9)", parts.join("; ")))
}

// 5. linear PPDE residual from closed forms and from finite differences
fn c5() -> Outcome {
    use rand::{Rng, SeedableRng};
    let kernel = rl(0.3);
    let coeff = gaussian(kernel.clone(), 0.0);
    let g = functional(Payoff::Power { exponent: 3 }, Running::zero(), kernel.clone());
    let u = FuturePart(&g);
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let e = simulate_ensemble(&coeff, grid, 20, 51).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(52);
    let cfg = FDConfig::new(Some(1e-3), 1e-5, FdScheme::Central).unwrap();
    let (mut closed_max, mut fd_max) = (0.0f64, 0.0f64);
    for p in 0..20 {
        let i = rng.random_range(1..grid.n_steps - 1);
        let t = grid.time(i);
        let field = theta_field(&e, &coeff, p).unwrap();
        let omega = field.concat(i).path;
        closed_max = closed_max.max(g.ppde_residual(t, &omega).unwrap().abs());
        // K^t(s) = K(s, t) for s > t; the value at s = t is immaterial for f = 0
        let k = kernel.clone();
        let eta = Scalar(move |s: f64| if s > t { k.eval(s, t).unwrap() } else { 0.0 });
        let dt = right_time_derivative(&u, t, &omega, &cfg).unwrap();
        let d2 = second_directional(&u, t, &omega, &eta, &eta, &cfg).unwrap();
        fd_max = fd_max.max((dt + 0.5 * d2).abs());
    }
    outcome(
        closed_max < 1e-4 && fd_max < 1e-2,
        format!("max |residual| closed form {closed_max:.2e} (limit 1e-4), finite differences {fd_max:.2e} (limit 1e-2), 20 points"),
    )
}

// 6. two-time and freeze scalings
fn c6() -> Outcome {
    let grid = TimeGrid::new(1.0, 128).unwrap();
    let pairs: Vec<(usize, usize)> = [1, 2, 4, 8, 16, 32].iter().map(|&l| (32, 32 + l)).collect();
    let levels = [2, 3, 4, 5, 6, 7];
    let brownian = gaussian(KernelSpec::constant(), 0.0);
    let rough = gaussian(rl(0.3), 0.0);
    let eb = simulate_ensemble(&brownian, grid, 4000, 61).unwrap();
    let er = simulate_ensemble(&rough, grid, 2000, 62).unwrap();
    let tb = two_time_scaling(&eb, &brownian, &pairs).unwrap();
    let tr = two_time_scaling(&er, &rough, &pairs).unwrap();
    let fb = freeze_rate(&eb, &brownian, &levels).unwrap();
    let fr = freeze_rate(&er, &rough, &levels).unwrap();
    let pass = tb.fit.slope >= 0.8 && tb.fit.r_squared >= 0.9 && tr.fit.slope >= 0.8 && tr.fit.r_squared >= 0.9 && fb.fit.slope <= -0.8;
    outcome(
        pass,
        format!(
            "two-time slope Brownian {:.2} (r² {:.3}), RL H=0.3 {:.2} (r² {:.3}) (limit ≥ 0.8, r² ≥ 0.9); freeze slope Brownian {:.2} (limit ≤ −0.8), RL H=0.3 {:.2} (reported)",
            tb.fit.slope, tb.fit.r_squared, tr.fit.slope, tr.fit.r_squared, fb.fit.slope, fr.fit.slope
        ),
    )
}

fn call_on_x(strike: f64) -> TerminalFn {
    Arc::new(move |h: &History<'_>| (h.current()[0] - strike).max(0.0))
}

// 7. BSDE solver reductions and the negative control
fn c7() -> Outcome {
    let kernel = rl(0.3);
    let coeff: Arc<dyn Coefficients> = Arc::new(gaussian(kernel.clone(), 0.0));
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let e = simulate_ensemble(coeff.as_ref(), grid, 100_000, 71).unwrap();
    let zero = BSDEProblem::conditional_expectation(coeff.clone(), call_on_x(0.1));
    let s = solve_lsmc(&zero, &e, &PolynomialBasis::default(), &DEFAULT_THETA_COLUMNS).unwrap();
    let u0 = functional(Payoff::Call { strike: 0.1 }, Running::zero(), kernel.clone())
        .eval_u(0.0, &Path::constant(grid.nodes(), &[0.0]))
        .unwrap();
    let z0 = (s.y0 - u0) / s.se;

    let (s0, vol, r) = (100.0, 0.2, 0.05);
    let mut c = gaussian(KernelSpec::constant(), s0);
    c.diffusion = Arc::new(move |_, x: &[f64], out: &mut [f64]| out[0] = vol * x[0]);
    let bs_coeff: Arc<dyn Coefficients> = Arc::new(c);
    let disc = BSDEProblem::discounted(bs_coeff.clone(), call_on_x(100.0), r).unwrap();
    let eb = simulate_ensemble(bs_coeff.as_ref(), TimeGrid::new(1.0, 32).unwrap(), 400_000, 72).unwrap();
    let sb = solve_lsmc(&disc, &eb, &PolynomialBasis::default(), &[]).unwrap();
    let oracle = (-r).exp() * bs_call(s0, 100.0, vol * vol);
    let rel = (sb.y0 - oracle).abs() / oracle;

    let wrong = functional(Payoff::Call { strike: 0.0 }, Running::zero(), kernel.clone().with_normalization(1.2f64.sqrt()).unwrap());
    let control = BSDEProblem::conditional_expectation(coeff.clone(), call_on_x(0.0));
    let en = simulate_ensemble(coeff.as_ref(), grid, 2000, 73).unwrap();
    let fk = feynman_kac_check(&control, &FuturePart(&wrong), &en).unwrap();
    outcome(
        z0.abs() < 3.0 && rel < 0.01 && fk.t_stat.abs() > 3.0,
        format!(
            "f=0: Y0 {:.5} vs u {:.5}, z {z0:+.2} (limit 3); discounted: {:.4} vs e^(-rT)·BS {oracle:.4}, rel {rel:.2e} (limit 1%); negative control residual t {:.1} (must exceed 3)",
            s.y0, u0, sb.y0, fk.t_stat
        ),
    )
}

fn heston(hurst: f64, lambda: f64, level: f64, nu: f64, rho: f64) -> RoughHestonParams {
    RoughHestonParams { s0: 100.0, v0: 0.04, hurst, mean_rev_rate: lambda, mean_rev_level: level, vol_of_vol: nu, correlation: rho }
}

// 8. forward-variance transforms
fn c8() -> Outcome {
    let mut round_trip: f64 = 0.0;
    let mut series: f64 = 0.0;
    for hurst in [0.1, 0.3] {
        for lambda in [0.5, 1.0, 2.0] {
            let p = heston(hurst, lambda, 0.09, 0.3, 0.0);
            let uniform: Vec<f64> = (0..200).map(|k| k as f64 / 199.0).collect();
            let theta: Vec<f64> = uniform.iter().map(|s| 0.04 + 0.02 * (3.0 * s).sin() + 0.01 * s).collect();
            let hat = theta_to_hat(&p, &uniform, &theta).unwrap();
            let back = hat_to_theta(&p, &uniform, &hat).unwrap();
            round_trip = theta.iter().zip(&back).fold(round_trip, |m, (a, b)| m.max((a - b).abs()));
            let graded = graded_horizons(0.0, 1.0, 800, 2.0 / p.alpha());
            let theta: Vec<f64> = graded.iter().map(|s| 0.04 + 0.02 * (3.0 * s).sin() + 0.01 * s).collect();
            match theta_to_hat_checked(&p, &graded, &theta, 1e-6) {
                Ok(c) => series = series.max(c.max_rel_error),
                Err(e) => return outcome(false, format!("H={hurst} λ={lambda}: {e}")),
            }
        }
    }
    outcome(
        round_trip < 1e-8 && series < 1e-6,
        format!("round-trip max error {round_trip:.2e} on 200 points (limit 1e-8); series vs product integration max rel {series:.2e} (limit 1e-6), H ∈ {{0.1, 0.3}}, λ ∈ {{0.5, 1, 2}}"),
    )
}

// 9. rough Heston pricing oracles
fn c9() -> Outcome {
    let grid = TimeGrid::new(1.0, 256).unwrap();
    let call = Claim::Call { strike: 100.0 };
    let det = heston(0.1, 2.0, 0.09, 0.0, -0.7);
    let scheme = Scheme::heston(det, grid).unwrap();
    let state = ObservedState::initial(&scheme);
    let mc = NestedConfig { inner_paths: 100_000, seed: 91, method: PricingMethod::MonteCarlo, ..Default::default() };
    let est = price_claim(&scheme, &call, &state, &mc).unwrap();
    let alpha = det.alpha();
    let relax = |t: f64| 0.09 + (0.04 - 0.09) * mittag_leffler(alpha, 1.0, -2.0 * t.powf(alpha)).0;
    let w = voltheta::quadrature::adaptive_gl(0.0, 1.0, 1e-12, &relax).0;
    let bs = bs_call(100.0, 100.0, w);
    let z_bs = (est.price - bs) / est.se;

    let p = heston(0.1, 0.3, 0.04, 0.3, 0.0);
    let scheme = Scheme::heston(p, grid).unwrap();
    let state = ObservedState::initial(&scheme);
    let plain = price_claim(&scheme, &call, &state, &NestedConfig { seed: 92, ..mc }).unwrap();
    let mix = price_claim(&scheme, &call, &state, &NestedConfig { seed: 93, method: PricingMethod::Mixing, ..mc }).unwrap();
    let z_mix = (plain.price - mix.price) / (plain.se * plain.se + mix.se * mix.se).sqrt();
    outcome(
        z_bs.abs() < 3.0 && z_mix.abs() < 3.0,
        format!(
            "ν=0: MC {:.4} ± {:.4} vs BS {bs:.4}, z {z_bs:+.2}; ρ=0: MC {:.4} ± {:.4} vs mixing {:.4} ± {:.4}, z {z_mix:+.2} (limits 3; 1e5 paths, N=256)",
            est.price, est.se, plain.price, plain.se, mix.price, mix.se
        ),
    )
}

// 10. hedging experiment
fn c10() -> Outcome {
    let p = heston(0.1, 0.3, 0.04, 0.3, -0.7);
    let scheme = Scheme::heston(p, TimeGrid::new(1.0, 100).unwrap()).unwrap();
    let call = Claim::Call { strike: 100.0 };
    let mut rows = Vec::new();
    for dates in [25, 50, 100] {
        let cfg = HedgeConfig {
            rebalance_dates: dates,
            outer_paths: 400,
            seed: 101,
            nested: NestedConfig { inner_paths: 128, ..Default::default() },
            initial_price_paths: 50_000,
            max_work: 1e13,
        };
        let c = hedge_experiment(&scheme, &call, &cfg).unwrap();
        rows.push((dates, c.unhedged.summary.std, c.stock_only.summary.std, c.stock_and_fv.summary.std));
    }
    let (_, u, s, f) = rows[1];
    let ordering = f < 0.5 * s && 0.5 * s < u;
    let monotone = rows.windows(2).all(|w| w[1].2 <= w[0].2 && w[1].3 <= w[0].3);
    let table: Vec<String> = rows.iter().map(|(d, u, s, f)| format!("{d} dates: unhedged {u:.3}, stock {s:.3}, stock+fv {f:.3}")).collect();
    outcome(
        ordering && monotone,
        format!("{}; at 50 dates stock+fv/stock = {:.3} (limit 0.5); monotone in dates: {monotone}", table.join("; "), f / s),
    )
}

// 11. rough Bergomi identities
fn c11() -> Outcome {
    let grid = TimeGrid::new(1.0, 128).unwrap();
    let p = RoughBergomiParams { s0: 100.0, v0: 0.04, hurst: 0.1, vol_of_vol: 1.9, correlation: -0.9 };
    let scheme = Scheme::bergomi(p, grid).unwrap();
    let paths = scheme.simulate(20_000, 111).unwrap();
    let e = &paths.ensemble;
    let l2 = p.vol_of_vol * p.vol_of_vol;
    let mut identity: f64 = 0.0;
    for q in 0..50 {
        for i in [0, 1, 17, 64, 100, 127, 128] {
            let c = voltheta::roughvol::bergomi_theta(e, &p, q, i).unwrap();
            let t = grid.time(i);
            let paper = p.v0 * (c.theta_values[128 - i] + 0.5 * l2 * ((1.0 - t).powf(0.2) - 1.0)).exp();
            identity = identity.max((c.hat_values[128 - i] - paper).abs() / paper);
            // Θ̂^t_t = V_t
            let v = e.state(q, i)[1];
            identity = identity.max((c.hat_values[0] - v).abs() / v);
        }
    }
    let mut z_v: f64 = 0.0;
    for i in [32, 64, 128] {
        let v: Vec<f64> = (0..e.path_count).map(|q| e.state(q, i)[1]).collect();
        z_v = z_v.max(MeanSe::of(&v).t_stat(p.v0).abs());
    }
    let flat = RoughBergomiParams { vol_of_vol: 0.0, ..p };
    let scheme0 = Scheme::bergomi(flat, grid).unwrap();
    let mc = NestedConfig { inner_paths: 100_000, seed: 112, method: PricingMethod::MonteCarlo, control_variate: false, ..Default::default() };
    let est = price_claim(&scheme0, &Claim::Call { strike: 100.0 }, &ObservedState::initial(&scheme0), &mc).unwrap();
    let bs = bs_call(100.0, 100.0, 0.04);
    let z_bs = (est.price - bs) / est.se;
    outcome(
        identity < 1e-12 && z_v < 3.0 && z_bs.abs() < 3.0,
        format!(
            "Θ̂ lognormal identity max rel {identity:.1e} (limit 1e-12); E[V_t] max |z| {z_v:.2}; λ_B=0 call {:.4} ± {:.4} vs BS {bs:.4}, z {z_bs:+.2} (limits 3); cap hits {}",
            est.price, est.se, paths.cap_hits
        ),
    )
}

/// CSV artifacts of small versions of each experiment.
fn artifacts() -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let coeff = gaussian(rl(0.3), 0.0);
    let e: PathEnsemble = simulate_ensemble(&coeff, grid, 64, 121).unwrap();
    let mut buf = Vec::new();
    write_ensemble_csv(&e, &mut buf).unwrap();
    out.push(buf);

    let u = functional(Payoff::Call { strike: 0.1 }, Running::square(), rl(0.3));
    let values: Vec<f64> = (0..64).into_par_iter().map(|p| u.eval_concat(&theta_field(&e, &coeff, p).unwrap().concat(16)).unwrap()).collect();
    let mut buf = Vec::new();
    write_columns(&mut buf, &["u"], &[&values]).unwrap();
    out.push(buf);

    let problem = BSDEProblem::conditional_expectation(Arc::new(coeff.clone()), call_on_x(0.1));
    let s = solve_lsmc(&problem, &e, &PolynomialBasis::default(), &DEFAULT_THETA_COLUMNS).unwrap();
    let y: Vec<f64> = (0..64).map(|p| s.y(p, 8)).collect();
    let mut buf = Vec::new();
    write_columns(&mut buf, &["y"], &[&y]).unwrap();
    out.push(buf);

    let scheme = Scheme::heston(heston(0.1, 0.3, 0.04, 0.3, -0.7), TimeGrid::new(1.0, 20).unwrap()).unwrap();
    let cfg = HedgeConfig {
        rebalance_dates: 10,
        outer_paths: 24,
        seed: 122,
        nested: NestedConfig { inner_paths: 32, ..Default::default() },
        initial_price_paths: 500,
        max_work: 1e12,
    };
    let c = hedge_experiment(&scheme, &Claim::Call { strike: 100.0 }, &cfg).unwrap();
    let mut buf = Vec::new();
    c.stock_and_fv.write_pnl_csv(&mut buf).unwrap();
    out.push(buf);
    let h = scheme.simulate(8, 123).unwrap();
    let mut buf = Vec::new();
    scheme.forward_curve(&h.ensemble, 3, 5).unwrap().write_csv(&mut buf).unwrap();
    out.push(buf);
    out
}

// 12. byte-identical artifacts under 1, 2 and 8 worker threads
fn c12() -> Outcome {
    let runs: Vec<Vec<Vec<u8>>> = [1, 2, 8]
        .iter()
        .map(|&k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap().install(artifacts))
        .collect();
    let same = runs[1] == runs[0] && runs[2] == runs[0];
    let bytes: usize = runs[0].iter().map(Vec::len).sum();
    outcome(same, format!("{} CSV artifacts ({bytes} bytes) identical across 1, 2, 8 threads: {same}", runs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("conditional expectation representation", c1),
        ("martingale dichotomy", c2),
        ("functional Itô certification", c3),
        ("singular pairing rate", c4),
        ("linear PPDE residual", c5),
        ("two-time and freeze scalings", c6),
        ("BSDE solver", c7),
        ("forward-variance transforms", c8),
        ("rough Heston pricing oracles", c9),
        ("hedging experiment", c10),
        ("rough Bergomi identities", c11),
        ("determinism across thread counts", c12),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!result.pass);
        println!(
            "[{}] criterion {id:>2} {name}: {} ({:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
