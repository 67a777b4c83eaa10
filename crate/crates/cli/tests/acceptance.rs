use std::f64::consts::{PI, SQRT_2};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gslab_cli::{config, execute, report_json, CheckRecord, RunOptions, RunOutput, ScenarioReport};
use gslab_core::comparison::{solve_xi_direct, UCProfile};
use gslab_core::domain::{build_grid, build_laplacian, GridSpec};
use gslab_core::linalg::{random_vector, seeded_rng};
use gslab_core::orlicz::{
    is_admissible, log_grid, luxemburg_norm, probe_grid, ComplementaryFunction, DerivedPhi1, NFunction,
};
use gslab_core::perturbation::{kappa_constant, make_measure, DensitySpec};
use gslab_core::spectral::{green_column, ground_state};

const LAMBDA0_TOL: f64 = 1e-2;
const XI_TOL: f64 = 1e-12;
const GREEN_TOL: f64 = 1e-10;
const BASELINE_BUDGET: Duration = Duration::from_secs(1);
const RATIO_TOL: f64 = 5e-3;
const RATIO_BUDGET: Duration = Duration::from_secs(5);
const SHIPPED_BUDGET: Duration = Duration::from_secs(120);
const HARDY_GAP: f64 = 0.05;
const BETA_TOL: f64 = 1e-6;
const LUXEMBURG_TOL: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn check<'a>(s: &'a ScenarioReport, name: &str) -> &'a CheckRecord {
    s.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("{} has no check {name}", s.name))
}

fn describe(c: &CheckRecord) -> String {
    match (c.value, c.threshold, &c.error) {
        (_, _, Some(e)) => format!("error {e}"),
        (Some(v), Some(t), _) => format!("{v:.4e} vs {t:.4e}"),
        _ => {
            if c.passed {
                "ok".into()
            } else {
                "violated".into()
            }
        }
    }
}

/// Requires the named checks on every listed scenario.
fn all_pass(run: &RunOutput, names: &[&str]) -> Outcome {
    let mut failed = Vec::new();
    for s in &run.report.scenarios {
        for n in names {
            let c = check(s, n);
            if !c.passed {
                failed.push(format!("{}:{n} ({})", s.name, describe(c)));
            }
        }
    }
    let detail =
        if failed.is_empty() { format!("{} scenarios", run.report.scenarios.len()) } else { failed.join("; ") };
    Outcome::new(failed.is_empty(), detail)
}

fn scenario<'a>(run: &'a RunOutput, name: &str) -> &'a ScenarioReport {
    run.report.scenarios.iter().find(|s| s.name == name).expect("shipped scenario")
}

fn interval(n: usize) -> gslab_core::Result<(gslab_core::domain::GridDomain, gslab_core::domain::FormOperator)> {
    let g = build_grid(&GridSpec::interval(n))?;
    let f = build_laplacian(&g);
    Ok((g, f))
}

fn baseline_exactness() -> gslab_core::Result<Outcome> {
    let start = Instant::now();
    let (g, form) = interval(63)?;
    let sd = ground_state(form.operator())?;
    let xi = solve_xi_direct(form.operator())?;
    let y = g.nearest([0.5, 0.0]);
    let col = green_column(form.operator(), y)?;
    let elapsed = start.elapsed();
    let lam_err = (sd.lambda0 - PI * PI).abs();
    let mut xi_err = 0.0_f64;
    let mut green_err = 0.0_f64;
    let yy = g.coords()[y][0];
    for ((c, v), gv) in g.coords().iter().zip(&xi).zip(&col) {
        let x = c[0];
        xi_err = xi_err.max((v - x * (1.0 - x) / 2.0).abs());
        green_err = green_err.max((gv - x.min(yy) * (1.0 - x.max(yy))).abs());
    }
    let ok = lam_err <= LAMBDA0_TOL && xi_err <= XI_TOL && green_err <= GREEN_TOL && elapsed < BASELINE_BUDGET;
    Ok(Outcome::new(
        ok,
        format!("|λ₀−π²| = {lam_err:.3e}, ξ error {xi_err:.2e}, Green error {green_err:.2e}, {elapsed:.2?}"),
    ))
}

fn ratio_anchor() -> gslab_core::Result<Outcome> {
    let start = Instant::now();
    let (_, form) = interval(255)?;
    let sd = ground_state(form.operator())?;
    let xi = solve_xi_direct(form.operator())?;
    let elapsed = start.elapsed();
    let r: Vec<f64> = sd.phi0.iter().zip(&xi).map(|(p, x)| p / x).collect();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(0.0, f64::max);
    let (want_lo, want_hi) = (2.0 * SQRT_2 * PI, 8.0 * SQRT_2);
    let (e_lo, e_hi) = ((lo - want_lo).abs() / want_lo, (hi - want_hi).abs() / want_hi);
    Ok(Outcome::new(
        e_lo <= RATIO_TOL && e_hi <= RATIO_TOL && elapsed < RATIO_BUDGET,
        format!("range [{lo:.4}, {hi:.4}], relative errors {e_lo:.2e}, {e_hi:.2e}, {elapsed:.2?}"),
    ))
}

fn hardy_recovery() -> gslab_core::Result<Outcome> {
    let mut kappas = Vec::new();
    for n in [63, 127, 255] {
        let (g, form) = interval(n)?;
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 })?;
        kappas.push(kappa_constant(&form, &mu)?.kappa);
    }
    let increasing = kappas.windows(2).all(|w| w[1] > w[0]);
    let gap = 0.25 - kappas[2];
    Ok(Outcome::new(
        increasing && (0.0..HARDY_GAP).contains(&gap),
        format!("κ at n = 63, 127, 255: {kappas:.4?}; gap to 0.25 at n = 255: {gap:.4}"),
    ))
}

fn beta_profile(a: f64) -> gslab_core::Result<Outcome> {
    let phi1 = DerivedPhi1::new(&NFunction::power(3.0)?)?;
    let profile = UCProfile::new(a, phi1)?;
    let times = log_grid(1e-4, 1e2, 20);
    let mut worst = 0.0_f64;
    let mut prev = f64::INFINITY;
    let mut decreasing = true;
    for &t in &times {
        let closed = profile.beta(t)?;
        let numeric = profile.beta_numeric(t)?;
        worst = worst.max((closed - numeric).abs() / closed);
        decreasing &= closed < prev;
        prev = closed;
    }
    Ok(Outcome::new(
        worst <= BETA_TOL && decreasing,
        format!("A = {a:.3e}, max relative gap {worst:.2e}, strictly decreasing: {decreasing}"),
    ))
}

fn orlicz_golden() -> gslab_core::Result<Outcome> {
    let mut rng = seeded_rng(3);
    let w: Vec<f64> = random_vector(&mut rng, 40).iter().map(|v| v.abs() + 0.01).collect();
    let f = random_vector(&mut rng, 40);
    let mut lux = 0.0_f64;
    let mut young = 0.0_f64;
    let mut pair = (f64::INFINITY, 0.0_f64);
    for p in [1.5, 2.0, 3.0, 4.5] {
        let phi = NFunction::power(p)?;
        let pn = f.iter().zip(&w).map(|(v, m)| v.abs().powf(p) * m).sum::<f64>().powf(1.0 / p);
        let want = p.powf(-1.0 / p) * pn;
        lux = lux.max((luxemburg_norm(&phi, &w, &f) - want).abs() / want);
        let psi = ComplementaryFunction::new(&phi)?;
        let grid = probe_grid();
        for &s in &grid {
            for &t in &grid {
                young = young.max(s * t / (phi.eval(s) + psi.eval(t)));
            }
            let r = phi.inverse(s)? * psi.inverse(s)? / s;
            pair = (pair.0.min(r), pair.1.max(r));
        }
    }
    let square = NFunction::power_with_coef(2.0, 1.0)?;
    let cube = NFunction::power(3.0)?;
    let admissible = [&square, &cube]
        .iter()
        .map(|phi| Ok(is_admissible(phi)?.admissible && DerivedPhi1::new(phi)?.admissibility.admissible))
        .collect::<gslab_core::Result<Vec<bool>>>()?;
    let ok = lux <= LUXEMBURG_TOL
        && young <= 1.0 + 1e-12
        && pair.0 >= 1.0 - 1e-9
        && pair.1 <= 2.0 + 1e-9
        && admissible.iter().all(|&a| a);
    Ok(Outcome::new(
        ok,
        format!(
            "Luxemburg error {lux:.2e}, max Young ratio {young:.6}, Φ⁻¹Ψ⁻¹/t in [{:.4}, {:.4}], t² and t³/3 admissible: {admissible:?}",
            pair.0, pair.1
        ),
    ))
}

fn from_result(r: gslab_core::Result<Outcome>) -> Outcome {
    r.unwrap_or_else(Outcome::error)
}

fn main() -> ExitCode {
    let shipped = config::shipped();
    let opts = RunOptions::default();
    let start = Instant::now();
    let run = match execute(&shipped, &opts) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL shipped run: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let shipped_time = start.elapsed();
    let baseline = scenario(&run, "interval-baseline");
    let baseline_a = baseline.comparison.as_ref().map(|c| c.constants.A);

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "baseline exactness", from_result(baseline_exactness())));
    results.push((2, "ratio anchor", from_result(ratio_anchor())));

    let verdicts = all_pass(&run, &["comparison.upper", "comparison.lower"]);
    results.push((
        3,
        "comparison verdicts",
        Outcome::new(
            verdicts.passed && shipped_time < SHIPPED_BUDGET,
            format!("{}, shipped run {shipped_time:.2?}", verdicts.detail),
        ),
    ));
    results.push((4, "Hardy constant recovery", from_result(hardy_recovery())));

    let sub = scenario(&run, "interval-hardy-subcritical");
    let ladder = check(sub, "form.ladder");
    results.push((
        5,
        "norm-resolvent ladder",
        Outcome::new(
            ladder.passed,
            format!("gap ratio {}; {}", describe(ladder), ladder.detail.clone().unwrap_or_default()),
        ),
    ));
    results.push((6, "resolvent formula", all_pass(&run, &["form.resolvent_formula"])));
    results.push((
        7,
        "profile β",
        match baseline_a {
            Some(a) => from_result(beta_profile(a)),
            None => Outcome::new(false, "baseline comparison missing"),
        },
    ));
    results.push((
        8,
        "ISO1 for both transforms",
        all_pass(&run, &["comparison.constants_xi", "comparison.constants_ground", "comparison.transform_identity"]),
    ));
    results.push((9, "Moser trace", all_pass(&run, &["comparison.moser_bounded", "comparison.moser_converged"])));

    let decay = check(baseline, "heat.asymptotic_decay");
    let log_ratio = check(baseline, "heat.log_ratio");
    let uc = all_pass(&run, &["heat.uc_bound_xi", "heat.uc_bound_ground"]);
    results.push((
        10,
        "heat asymptotics",
        Outcome::new(
            decay.passed && log_ratio.passed && uc.passed,
            format!(
                "decay exponent error {}; log-ratio error {}; UC bound: {}",
                describe(decay),
                describe(log_ratio),
                uc.detail
            ),
        ),
    ));
    results.push((11, "Orlicz golden values", from_result(orlicz_golden())));

    let repeat = execute(&shipped, &RunOptions { jobs: Some(2), ..opts });
    results.push((
        12,
        "determinism",
        match repeat {
            Ok(r) => {
                let (a, b) = (report_json(&run.report), report_json(&r.report));
                Outcome::new(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
            }
            Err(e) => Outcome::error(e),
        },
    ));

    let mut failures = 0;
    for (k, title, o) in &results {
        println!("{} {k:>2} {title}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.passed);
    }
    println!("{} of {} criteria pass", results.len() - failures, results.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
