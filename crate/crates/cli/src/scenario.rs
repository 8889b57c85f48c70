//! Scenario files: one TOML document per run, validated before any computation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use voltheta::kernel::{GapTable, KernelSpec, SeparableCoefficients};
use voltheta::roughvol::{Model, PricingMethod};
use voltheta::simulate::TimeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    VerifyIto,
    SolveLinear,
    SolveBsde,
    Price,
    Hedge,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::VerifyIto => "verify-ito",
            Command::SolveLinear => "solve-linear",
            Command::SolveBsde => "solve-bsde",
            Command::Price => "price",
            Command::Hedge => "hedge",
            Command::Diagnose => "diagnose",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Optional; when present it must match the subcommand.
    pub command: Option<Command>,
    pub seed: u64,
    pub description: Option<String>,
    pub grid: Option<GridSection>,
    pub kernel: Option<KernelSection>,
    pub paths: Option<usize>,
    pub payoff: Option<PayoffSection>,
    pub model: Option<Model>,
    pub nested: Option<NestedSection>,
    pub linear: Option<LinearSection>,
    pub hedge: Option<HedgeSection>,
    pub ito: Option<ItoSection>,
    pub bsde: Option<BsdeSection>,
    pub diagnose: Option<DiagnoseSection>,
    pub price: Option<PriceSection>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, Threshold>,
    pub output: Option<OutputSection>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "one")]
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RiemannLiouville,
    Constant,
    Tabulated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionForm {
    /// σ(x) = volatility
    #[default]
    Additive,
    /// σ(x) = volatility·x
    Geometric,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: Family,
    pub hurst: Option<f64>,
    pub normalization: Option<f64>,
    /// Two-column CSV (gap, value), relative to the scenario file.
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub diffusion: DiffusionForm,
    #[serde(default = "one")]
    pub volatility: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    pub kind: String,
    pub strike: Option<f64>,
    pub exponent: Option<u32>,
    #[serde(default = "zero_name")]
    pub running: String,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NestedSection {
    pub inner_paths: usize,
    pub method: PricingMethod,
    pub bump_stock: f64,
    pub bump_fv: f64,
    pub control_variate: bool,
}

impl Default for NestedSection {
    fn default() -> Self {
        NestedSection { inner_paths: 200, method: PricingMethod::Mixing, bump_stock: 0.01, bump_fv: 0.01, control_variate: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSection {
    /// Anchor times as fractions of the horizon.
    pub anchors: Vec<f64>,
}

impl Default for LinearSection {
    fn default() -> Self {
        LinearSection { anchors: vec![0.25, 0.5, 0.75] }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HedgeSection {
    pub rebalance_dates: Vec<usize>,
    /// Date count used for the ratio metrics; defaults to the middle entry.
    pub reference_dates: Option<usize>,
    pub outer_paths: usize,
    pub initial_price_paths: usize,
    pub max_work: f64,
}

impl Default for HedgeSection {
    fn default() -> Self {
        HedgeSection { rebalance_dates: vec![50], reference_dates: None, outer_paths: 1000, initial_price_paths: 20_000, max_work: 1e12 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoFunctional {
    /// E[g(X_T) + ∫f | F_t] from the payoff section.
    #[default]
    Gauss,
    /// ∫_t^T (s−t)^{−1/2} ω_s ds.
    SingularWeight,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoSection {
    pub functional: ItoFunctional,
    /// Coarsening factors of the fine grid; empty skips the refinement study.
    pub factors: Vec<usize>,
    pub pairing: Option<PairingSection>,
}

impl Default for ItoSection {
    fn default() -> Self {
        ItoSection { functional: ItoFunctional::Gauss, factors: vec![8, 4, 2, 1], pairing: None }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingSection {
    /// Anchor time as a fraction of the horizon.
    pub at: f64,
    pub levels: [u32; 2],
}

impl Default for PairingSection {
    fn default() -> Self {
        PairingSection { at: 0.25, levels: [4, 10] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    #[default]
    Zero,
    Discounted,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdeSection {
    pub driver: Driver,
    pub rate: f64,
    pub degree: u32,
    pub theta_columns: Vec<f64>,
    /// Paths for the martingale-residual check of the closed-form solution; 0 skips it.
    pub check_paths: usize,
}

impl Default for BsdeSection {
    fn default() -> Self {
        BsdeSection { driver: Driver::Zero, rate: 0.0, degree: 2, theta_columns: vec![1.0, 0.5], check_paths: 0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub two_time: bool,
    pub freeze_levels: Vec<u32>,
    /// Grid sizes for the sup-moment scan; empty skips it.
    pub moment_grids: Vec<usize>,
    pub covariance: bool,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection { two_time: true, freeze_levels: vec![2, 3, 4, 5, 6, 7], moment_grids: Vec::new(), covariance: true }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceSection {
    /// Also price with the other estimator and report the difference.
    pub cross_check: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Threshold {
    pub fn holds(&self, v: f64) -> bool {
        v.is_finite() && self.min.map_or(true, |m| v >= m) && self.max.map_or(true, |m| v <= m)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn zero_name() -> String {
    "zero".into()
}

/// A scenario that passed validation, with the resolved pieces the commands need.
pub struct Validated {
    pub command: Command,
    pub scenario: Scenario,
    /// Directory of the scenario file, for relative table paths.
    pub base_dir: Option<PathBuf>,
}

pub fn parse(text: &str) -> Result<Scenario, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

impl Scenario {
    pub fn grid(&self) -> Result<TimeGrid, String> {
        let g = self.grid.ok_or("missing [grid] section")?;
        TimeGrid::new(g.horizon, g.steps).map_err(|e| format!("grid: {e}"))
    }

    pub fn paths(&self) -> Result<usize, String> {
        match self.paths {
            Some(0) => Err("paths must be positive".into()),
            Some(n) => Ok(n),
            None => Err("missing `paths`".into()),
        }
    }

    pub fn model(&self) -> Result<Model, String> {
        let m = self.model.ok_or("missing [model] section")?;
        m.validate().map_err(|e| format!("model: {e}"))?;
        Ok(m)
    }
}

impl KernelSection {
    /// The kernel with an additive volatility folded into its normalization.
    pub fn kernel(&self, base_dir: Option<&FsPath>) -> Result<KernelSpec, String> {
        let hurst = || self.hurst.ok_or_else(|| format!("kernel family {:?} needs `hurst`", self.family));
        let mut k = match self.family {
            Family::RiemannLiouville => KernelSpec::riemann_liouville(hurst()?),
            Family::Constant => {
                if self.hurst.is_some_and(|h| h != 0.5) {
                    return Err("the constant kernel has hurst 1/2".into());
                }
                Ok(KernelSpec::constant())
            }
            Family::Tabulated => {
                let rel = self.table.as_ref().ok_or("tabulated kernel needs `table`")?;
                let path = base_dir.map_or_else(|| rel.clone(), |d| d.join(rel));
                let file = std::fs::File::open(&path).map_err(|e| format!("kernel table {}: {e}", path.display()))?;
                let table = GapTable::from_csv(file).map_err(|e| format!("kernel table {}: {e}", path.display()))?;
                KernelSpec::tabulated(hurst()?, table)
            }
        }
        .map_err(|e| format!("kernel: {e}"))?;
        if !(self.volatility.is_finite() && self.volatility > 0.0) {
            return Err(format!("kernel volatility must be positive, got {}", self.volatility));
        }
        let mut c = self.normalization.unwrap_or(1.0);
        if self.diffusion == DiffusionForm::Additive {
            c *= self.volatility;
        }
        if c != 1.0 {
            k = k.with_normalization(c).map_err(|e| format!("kernel: {e}"))?;
        }
        Ok(k)
    }

    pub fn coefficients(&self, base_dir: Option<&FsPath>) -> Result<SeparableCoefficients, String> {
        let mut c = SeparableCoefficients::gaussian(self.kernel(base_dir)?, self.x0);
        if self.diffusion == DiffusionForm::Geometric {
            let vol = self.volatility;
            c.diffusion = std::sync::Arc::new(move |_, x: &[f64], out: &mut [f64]| out[0] = vol * x[0]);
        }
        Ok(c)
    }
}

impl Validated {
    pub fn kernel_section(&self) -> Result<&KernelSection, String> {
        self.scenario.kernel.as_ref().ok_or_else(|| "missing [kernel] section".into())
    }

    /// Names of the metrics the command will report for this configuration.
    pub fn metric_names(&self) -> Vec<&'static str> {
        let s = &self.scenario;
        match self.command {
            Command::Simulate => match s.model {
                Some(Model::Heston(_)) => vec!["stock_mean_t_stat", "cap_hits", "transform_round_trip", "transform_series_rel"],
                Some(Model::Bergomi(_)) => vec!["stock_mean_t_stat", "variance_mean_t_stat", "cap_hits"],
                None => vec!["terminal_mean", "terminal_var", "mean_t_stat"],
            },
            Command::VerifyIto => {
                let ito = s.ito.clone().unwrap_or_default();
                let mut m = Vec::new();
                if !ito.factors.is_empty() {
                    m.extend(["fitted_order", "fit_r_squared", "rms_finest"]);
                }
                if ito.pairing.is_some() {
                    m.extend(["pairing_rate", "pairing_r_squared"]);
                }
                m
            }
            Command::SolveLinear => {
                let mut m = vec!["u0", "u_drift_max_abs_t"];
                if s.payoff.as_ref().is_some_and(|p| p.running == "zero") {
                    m.push("markov_drift_min_abs_t");
                }
                m
            }
            Command::SolveBsde => {
                let mut m = vec!["y0", "y0_se"];
                if self.bsde_oracle_available() {
                    m.extend(["oracle", "oracle_rel_error", "oracle_abs_z"]);
                }
                if s.bsde.as_ref().is_some_and(|b| b.check_paths > 0) {
                    m.push("residual_abs_t");
                }
                m
            }
            Command::Price => {
                let mut m = vec!["price", "price_se"];
                if self.price_oracle_available() {
                    m.extend(["oracle", "oracle_abs_z"]);
                }
                if s.price.is_some_and(|p| p.cross_check) {
                    m.push("cross_check_abs_z");
                }
                m
            }
            Command::Hedge => vec![
                "std_unhedged",
                "std_stock_only",
                "std_stock_and_fv",
                "fv_to_stock_ratio",
                "stock_to_unhedged_ratio",
                "monotone_in_dates",
                "unstable_fraction",
            ],
            Command::Diagnose => {
                let d = s.diagnose.clone().unwrap_or_default();
                let mut m = Vec::new();
                if d.two_time {
                    m.extend(["two_time_slope", "two_time_r_squared"]);
                }
                if !d.freeze_levels.is_empty() {
                    m.extend(["freeze_slope", "freeze_r_squared"]);
                }
                if d.covariance {
                    m.push("covariance_max_abs_t");
                }
                if !d.moment_grids.is_empty() {
                    m.push("moments_diverged");
                }
                m
            }
        }
    }

    /// Closed-form Y_0 exists for the Gaussian case (additive noise, supported
    /// payoff) and for Black–Scholes (constant kernel, geometric noise, call/put).
    pub fn bsde_oracle_available(&self) -> bool {
        let (Some(k), Some(p)) = (&self.scenario.kernel, &self.scenario.payoff) else { return false };
        match k.diffusion {
            DiffusionForm::Additive => p.running == "zero",
            DiffusionForm::Geometric => k.family == Family::Constant && matches!(p.kind.as_str(), "call" | "put") && p.running == "zero",
        }
    }

    /// Black–Scholes applies when the variance path is deterministic.
    pub fn price_oracle_available(&self) -> bool {
        match self.scenario.model {
            Some(Model::Heston(p)) => p.vol_of_vol == 0.0,
            Some(Model::Bergomi(p)) => p.vol_of_vol == 0.0,
            None => false,
        }
    }
}

/// Structural checks that need no computation. Errors read "field: problem".
pub fn validate(scenario: Scenario, command: Command, base_dir: Option<PathBuf>) -> Result<Validated, String> {
    if let Some(c) = scenario.command {
        if c != command {
            return Err(format!("command: scenario is for `{c}`, invoked as `{command}`"));
        }
    }
    let v = Validated { command, scenario, base_dir };
    let s = &v.scenario;
    let base = v.base_dir.as_deref();
    let needs_kernel = matches!(command, Command::VerifyIto | Command::SolveLinear | Command::SolveBsde | Command::Diagnose)
        || (command == Command::Simulate && s.model.is_none());
    let needs_model = matches!(command, Command::Price | Command::Hedge);
    let grid = s.grid()?;
    if needs_kernel {
        let k = v.kernel_section()?;
        k.coefficients(base)?;
        if matches!(command, Command::SolveLinear | Command::Diagnose) && k.diffusion != DiffusionForm::Additive {
            return Err(format!("kernel.diffusion: `{command}` needs additive noise"));
        }
    }
    if needs_model || (command == Command::Simulate && s.model.is_some()) {
        s.model()?;
    }
    if !matches!(command, Command::Price | Command::Hedge) {
        s.paths()?;
    }
    match command {
        Command::SolveLinear | Command::SolveBsde => {
            payoff(s)?;
        }
        Command::Price | Command::Hedge => {
            claim(s)?;
        }
        Command::VerifyIto => {
            let ito = s.ito.clone().unwrap_or_default();
            if ito.factors.is_empty() && ito.pairing.is_none() {
                return Err("ito: nothing to do (no factors and no [ito.pairing])".into());
            }
            if ito.functional == ItoFunctional::Gauss {
                payoff(s)?;
                if v.kernel_section()?.diffusion != DiffusionForm::Additive {
                    return Err("kernel.diffusion: the gauss functional needs additive noise".into());
                }
            }
            for &f in &ito.factors {
                if f == 0 || grid.n_steps % f != 0 || grid.n_steps / f < 2 {
                    return Err(format!("ito.factors: {f} does not divide {} steps into at least 2", grid.n_steps));
                }
            }
            if ito.factors.len() == 1 {
                return Err("ito.factors: a refinement study needs at least two factors".into());
            }
            if let Some(p) = ito.pairing {
                if !(p.at > 0.0 && p.at < 1.0) || p.levels[0] > p.levels[1] || p.levels[1] - p.levels[0] < 2 {
                    return Err("ito.pairing: need 0 < at < 1 and at least three levels".into());
                }
            }
        }
        _ => {}
    }
    if let Some(l) = &s.linear {
        if l.anchors.is_empty() || l.anchors.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err("linear.anchors: fractions strictly between 0 and 1".into());
        }
    }
    if command == Command::SolveBsde {
        let b = s.bsde.clone().unwrap_or_default();
        if !(1..=2).contains(&b.degree) {
            return Err("bsde.degree: 1 or 2".into());
        }
        if b.theta_columns.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err("bsde.theta_columns: fractions in [0, 1]".into());
        }
        if !(b.rate.is_finite() && b.rate >= 0.0) || (b.driver == Driver::Zero && b.rate != 0.0) {
            return Err("bsde.rate: non-negative, and only with driver = \"discounted\"".into());
        }
    }
    if command == Command::Hedge {
        let h = s.hedge.clone().unwrap_or_default();
        if h.rebalance_dates.is_empty() {
            return Err("hedge.rebalance_dates: at least one entry".into());
        }
        for &d in &h.rebalance_dates {
            if d == 0 || grid.n_steps % d != 0 {
                return Err(format!("hedge.rebalance_dates: {d} does not divide {} steps", grid.n_steps));
            }
        }
        if let Some(r) = h.reference_dates {
            if !h.rebalance_dates.contains(&r) {
                return Err("hedge.reference_dates: must be one of rebalance_dates".into());
            }
        }
        if h.outer_paths < 2 || h.initial_price_paths < 2 {
            return Err("hedge: outer_paths and initial_price_paths must be at least 2".into());
        }
    }
    if matches!(command, Command::Price | Command::Hedge) {
        let n = s.nested.unwrap_or_default();
        if n.inner_paths < 2 {
            return Err("nested.inner_paths: at least 2".into());
        }
    }
    if command == Command::Diagnose {
        let d = s.diagnose.clone().unwrap_or_default();
        if (d.two_time || d.covariance) && grid.n_steps < 16 {
            return Err("diagnose: the two-time and covariance checks need at least 16 steps".into());
        }
        if !d.freeze_levels.is_empty() && d.freeze_levels.len() < 4 {
            return Err("diagnose.freeze_levels: at least 4 levels, or none".into());
        }
        if let Some(&m) = d.moment_grids.iter().max() {
            if d.moment_grids.iter().any(|&g| g == 0 || m % g != 0) {
                return Err("diagnose.moment_grids: every size must divide the largest".into());
            }
        }
    }
    let names = v.metric_names();
    for (name, t) in &s.thresholds {
        if !names.contains(&name.as_str()) {
            return Err(format!("thresholds.{name}: not reported by `{command}` here (available: {})", names.join(", ")));
        }
        if t.min.is_none() && t.max.is_none() {
            return Err(format!("thresholds.{name}: give `min`, `max` or both"));
        }
    }
    Ok(v)
}

pub fn payoff(s: &Scenario) -> Result<(voltheta::gauss::Payoff, voltheta::gauss::Running), String> {
    let p = s.payoff.as_ref().ok_or("missing [payoff] section")?;
    let g = voltheta::gauss::Payoff::from_name(&p.kind, p.strike, p.exponent).map_err(|e| format!("payoff: {e}"))?;
    let f = voltheta::gauss::Running::from_name(&p.running).map_err(|e| format!("payoff.running: {e}"))?;
    Ok((g, f))
}

pub fn claim(s: &Scenario) -> Result<voltheta::roughvol::Claim, String> {
    use voltheta::roughvol::Claim;
    let p = s.payoff.as_ref().ok_or("missing [payoff] section")?;
    if p.running != "zero" {
        return Err("payoff.running: claims under a model have no running cost".into());
    }
    let strike = || match p.strike {
        Some(k) if k.is_finite() && k > 0.0 => Ok(k),
        _ => Err(format!("payoff.strike: `{}` needs a positive strike", p.kind)),
    };
    match p.kind.as_str() {
        "call" => Ok(Claim::Call { strike: strike()? }),
        "put" => Ok(Claim::Put { strike: strike()? }),
        "stock" => Ok(Claim::Stock),
        other => Err(format!("payoff.kind: `{other}` is not a model claim (call, put, stock)")),
    }
}
