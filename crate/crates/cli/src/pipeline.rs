use std::time::Instant;

use gslab_core::comparison::{sharp_comparison, solve_xi, ComparisonReport, NuAnalysis, Route, Scenario, UCProfile};
use gslab_core::domain::carre_du_champ;
use gslab_core::heat::{
    green_consistency, heat_kernel, kernel_invariants, large_time_asymptotics, uc_bound_check, AsymptoticsTable,
    KernelInvariants, UcVerdict,
};
use gslab_core::linalg::{random_vector, seeded_rng};
use gslab_core::orlicz::{luxemburg_norm, probe_grid, ComplementaryFunction};
use gslab_core::perturbation::{convergence_report, hardy_holds, reciprocal_supersolution, ConvergenceTable};
use gslab_core::spectral::{
    eigenfunction_lower_bound, ground_state, resolvent_formula_check, xi_bound_check, SpectralData,
};
use gslab_core::Error;
use serde::Serialize;

use crate::config::{CheckGroup, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckRecord {
    fn verdict(name: &str, passed: bool) -> Self {
        Self { name: name.into(), passed, value: None, threshold: None, detail: None, error: None }
    }

    fn measured(name: &str, value: f64, threshold: f64, passed: bool) -> Self {
        Self { value: Some(value), threshold: Some(threshold), ..Self::verdict(name, passed) }
    }

    fn failed(name: &str, err: &str) -> Self {
        Self { error: Some(err.into()), ..Self::verdict(name, false) }
    }

    fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

pub const ORLICZ_CHECKS: &[&str] = &[
    "orlicz.nfunction",
    "orlicz.young",
    "orlicz.conjugate_pair",
    "orlicz.luxemburg_power",
    "orlicz.admissible",
    "orlicz.growth",
];
pub const FORM_CHECKS: &[&str] = &[
    "form.connected",
    "form.gamma_sum",
    "form.markov",
    "form.hardy",
    "form.supersolution",
    "form.resolvent_formula",
    "form.ladder",
];
pub const SPECTRAL_CHECKS: &[&str] =
    &["spectral.ground_state", "spectral.green_lower", "spectral.eigen_lower_bound", "spectral.xi_bound"];
pub const COMPARISON_CHECKS: &[&str] = &[
    "comparison.constants_xi",
    "comparison.constants_ground",
    "comparison.transform_identity",
    "comparison.w_lower",
    "comparison.c_s_converged",
    "comparison.upper",
    "comparison.upper_all_t",
    "comparison.lower",
    "comparison.moser_bounded",
    "comparison.moser_converged",
];
pub const HEAT_CHECKS: &[&str] = &[
    "heat.invariants",
    "heat.green_consistency",
    "heat.intrinsic_time",
    "heat.uc_bound_xi",
    "heat.uc_bound_ground",
    "heat.asymptotic_decay",
    "heat.log_ratio",
];

pub fn group_checks(g: CheckGroup) -> &'static [&'static str] {
    match g {
        CheckGroup::Orlicz => ORLICZ_CHECKS,
        CheckGroup::Form => FORM_CHECKS,
        CheckGroup::Spectral => SPECTRAL_CHECKS,
        CheckGroup::Comparison => COMPARISON_CHECKS,
        CheckGroup::Heat => HEAT_CHECKS,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub nodes: usize,
    pub h: f64,
    pub kappa: f64,
    pub route: Route,
    pub lambda0_base: f64,
    pub lambda0: Option<f64>,
    pub intrinsic_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatSection {
    pub invariants: Vec<KernelInvariants>,
    pub uc_xi: Vec<UcVerdict>,
    pub uc_ground: Vec<UcVerdict>,
    pub asymptotics: AsymptoticsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heat: Option<HeatSection>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    /// `(file name, contents)`
    pub csv: Vec<(String, String)>,
    /// `(stage, seconds)`
    pub timing: Vec<(String, f64)>,
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    sc: &'a Scenario,
    sd_mu: Option<SpectralData>,
    xi: Option<Vec<f64>>,
    comparison: Option<(ComparisonReport, NuAnalysis)>,
    comparison_error: Option<String>,
}

fn orlicz_checks(ctx: &Ctx) -> Result<Vec<CheckRecord>, Error> {
    let sc = ctx.sc;
    let phi = &sc.phi;
    let psi = ComplementaryFunction::new(phi)?;
    let grid = gslab_core::orlicz::log_grid(1e-3, 1e3, 25);
    let mut young = 0.0_f64;
    for &s in &grid {
        for &t in &grid {
            young = young.max(s * t / (phi.eval(s) + psi.eval(t)));
        }
    }
    let mut pair = (f64::INFINITY, 0.0_f64);
    for &t in &probe_grid() {
        let r = phi.inverse(t)? * psi.inverse(t)? / t;
        pair = (pair.0.min(r), pair.1.max(r));
    }
    let lux = match phi.as_power() {
        Some((p, coef)) => {
            let mut rng = seeded_rng(sc.seed);
            let f = random_vector(&mut rng, sc.grid.len());
            let m = sc.base.mass();
            let pn: f64 = f.iter().zip(m).map(|(v, w)| v.abs().powf(p) * w).sum::<f64>().powf(1.0 / p);
            let want = coef.powf(1.0 / p) * pn;
            let err = (luxemburg_norm(phi, m, &f) - want).abs() / want;
            CheckRecord::measured("orlicz.luxemburg_power", err, 1e-9, err <= 1e-9)
        }
        None => CheckRecord::verdict("orlicz.luxemburg_power", true).with_detail("not applicable: Φ is not a power"),
    };
    let adm = &sc.phi1.admissibility;
    Ok(vec![
        CheckRecord::verdict("orlicz.nfunction", phi.validate().is_ok()),
        CheckRecord::measured("orlicz.young", young, 1.0, young <= 1.0 + 1e-12),
        CheckRecord::measured("orlicz.conjugate_pair", pair.1, 2.0, pair.0 >= 1.0 - 1e-9 && pair.1 <= 2.0 + 1e-9)
            .with_detail(format!("min ratio {:e}", pair.0)),
        lux,
        CheckRecord::measured("orlicz.admissible", adm.integral, f64::INFINITY, adm.admissible),
        match sc.phi1.growth {
            Some(g) => CheckRecord::measured("orlicz.growth", g.epsilon, 0.0, g.epsilon > 0.0 && g.a > 0.0),
            None => CheckRecord::failed("orlicz.growth", "no growth exponent found on the probe grid"),
        },
    ])
}

fn form_checks(ctx: &Ctx) -> Result<(Vec<CheckRecord>, Option<ConvergenceTable>), Error> {
    let sc = ctx.sc;
    let base = &sc.base;
    let n = base.dim();
    let mut rng = seeded_rng(sc.seed ^ 0xf0);
    let probes: Vec<Vec<f64>> = (0..20).map(|_| random_vector(&mut rng, n)).collect();
    let gamma_defect = probes
        .iter()
        .map(|f| {
            let e = base.energy(f);
            (carre_du_champ(base, f).iter().sum::<f64>() - e).abs() / e
        })
        .fold(0.0, f64::max);
    let markov = probes.iter().all(|f| {
        let c: Vec<f64> = f.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        base.energy(&c) <= base.energy(f) * (1.0 + 1e-12)
    });
    let kappa = sc.kappa();
    let hardy = probes.iter().all(|f| hardy_holds(&sc.form, f));
    let sup = reciprocal_supersolution(&sc.form, 0.5)?;
    let resolvent = if kappa < 1.0 {
        let r = resolvent_formula_check(base, sc.form.measure(), kappa, 10, sc.seed)?;
        CheckRecord::measured("form.resolvent_formula", r.max_rel_discrepancy, 1e-7, r.max_rel_discrepancy <= 1e-7)
    } else {
        CheckRecord::verdict("form.resolvent_formula", true).with_detail("not applicable: κ ≥ 1")
    };
    let (ladder, table) = if sc.form.measure().measure.is_zero() {
        (CheckRecord::verdict("form.ladder", true).with_detail("not applicable: μ = 0"), None)
    } else {
        let t = convergence_report(&sc.form, sc.spec.k_max)?;
        let rows = &t.rows;
        let by_k = |k: usize| rows.iter().find(|r| r.k == k);
        let (r2, rk) = (by_k(2).expect("k_max ≥ 2"), rows.last().expect("rows"));
        let gap_ratio = rk.resolvent_gap / r2.resolvent_gap;
        let lam_rel = (rk.lambda0 - t.lambda0_limit).abs() / t.lambda0_limit;
        let strict_gap = rows.windows(2).all(|w| w[1].resolvent_gap < w[0].resolvent_gap);
        let lam_dec =
            rows.windows(2).all(|w| (w[1].lambda0 - t.lambda0_limit).abs() < (w[0].lambda0 - t.lambda0_limit).abs());
        let ok = strict_gap && gap_ratio < 0.1 && lam_dec && lam_rel < 0.05;
        (
            CheckRecord::measured("form.ladder", gap_ratio, 0.1, ok).with_detail(format!(
                "resolvent gap strictly decreasing: {strict_gap}; |λ₀^(k) − λ₀| decreasing: {lam_dec}; \
                 relative λ₀ gap at k = {}: {lam_rel:e}",
                rk.k
            )),
            Some(t),
        )
    };
    Ok((
        vec![
            CheckRecord::verdict("form.connected", base.is_connected()),
            CheckRecord::measured("form.gamma_sum", gamma_defect, 1e-10, gamma_defect <= 1e-10),
            CheckRecord::verdict("form.markov", markov),
            CheckRecord::measured(
                "form.hardy",
                kappa,
                1.0 + sc.spec.critical_tol,
                hardy && kappa <= 1.0 + sc.spec.critical_tol,
            ),
            CheckRecord::measured("form.supersolution", sup.min_residual, 0.0, sup.verdict),
            resolvent,
            ladder,
        ],
        table,
    ))
}

fn spectral_checks(ctx: &Ctx) -> Result<Vec<CheckRecord>, Error> {
    let sc = ctx.sc;
    let sd = ctx.sd_mu.as_ref().ok_or_else(|| Error::NoSolution("no ground state for H_μ".into()))?;
    let xi = ctx.xi.as_ref().ok_or_else(|| Error::NoSolution("no ξ for H_μ".into()))?;
    let gl = &sc.green_lower;
    let lower = eigenfunction_lower_bound(sd, &sc.base_spectral, gl.c_g, sc.base.mass());
    let xb = xi_bound_check(&sc.base, sc.kappa(), xi)?;
    Ok(vec![
        CheckRecord::measured(
            "spectral.ground_state",
            sd.residual,
            1e-8,
            sd.residual <= 1e-8 && sd.is_positive() && sd.lambda0 <= sc.base_spectral.lambda0 * (1.0 + 1e-12),
        ),
        CheckRecord::measured(
            "spectral.green_lower",
            gl.c_g,
            gl.constructive.unwrap_or(0.0),
            gl.c_g > 0.0 && gl.constructive_below_empirical != Some(false),
        ),
        CheckRecord::measured("spectral.eigen_lower_bound", lower.worst_margin, 0.0, lower.holds),
        CheckRecord::measured("spectral.xi_bound", xb.worst_ratio, 1.0, xb.holds)
            .with_detail(format!("max K1 = {:e} at node {}", xb.max_k1, xb.worst_node)),
    ])
}

fn comparison_checks(ctx: &Ctx) -> Result<Vec<CheckRecord>, Error> {
    let (rep, a) = match (&ctx.comparison, &ctx.comparison_error) {
        (Some(c), _) => c,
        (None, Some(e)) => return Err(Error::InternalInconsistency(e.clone())),
        (None, None) => return Err(Error::InternalInconsistency("comparison not run".into())),
    };
    let defect = a.verification.transform_defect.max(a.verification_ground.transform_defect);
    let w_lower = a.doob_xi.lower_bound.unwrap_or(false) && a.doob_ground.lower_bound.unwrap_or(false);
    let upper_detail = match &rep.ladder_limit {
        Some(l) => format!("ladder limit: max ratio {:e}, Γ {:e}", l.max_ratio.value, l.gamma.value),
        None => format!("t* = {:e}", rep.profile.t_star),
    };
    Ok(vec![
        CheckRecord::measured("comparison.constants_xi", rep.verification.iso1, 1.0, true)
            .with_detail(format!("worst ratios: s2 {:e}, c1 {:e}", rep.verification.s2, rep.verification.c1)),
        CheckRecord::measured("comparison.constants_ground", rep.verification_ground.iso1, 1.0, true).with_detail(
            format!("worst ratios: s2 {:e}, c1 {:e}", rep.verification_ground.s2, rep.verification_ground.c1),
        ),
        CheckRecord::measured("comparison.transform_identity", defect, 1e-8, defect <= 1e-8),
        CheckRecord::verdict("comparison.w_lower", w_lower),
        CheckRecord::verdict("comparison.c_s_converged", rep.c_s_converged),
        CheckRecord::measured("comparison.upper", rep.ratios.max, rep.profile.c_nu_t, rep.verdicts.upper)
            .with_detail(upper_detail),
        CheckRecord::verdict("comparison.upper_all_t", rep.theorem_holds_all_t),
        CheckRecord::measured("comparison.lower", rep.ratios.max_inverse, rep.profile.m_nu_t, rep.verdicts.lower),
        CheckRecord::verdict("comparison.moser_bounded", rep.moser_bounded),
        CheckRecord::measured("comparison.moser_converged", rep.moser_final_gap, 0.02, rep.moser_final_gap <= 0.02),
    ])
}

fn heat_checks(ctx: &Ctx) -> Result<(Vec<CheckRecord>, HeatSection), Error> {
    let sc = ctx.sc;
    let (_, a) = ctx
        .comparison
        .as_ref()
        .ok_or_else(|| Error::InternalInconsistency(ctx.comparison_error.clone().unwrap_or_default()))?;
    let xi = ctx.xi.as_ref().ok_or_else(|| Error::NoSolution("no ξ for H_μ".into()))?;
    let op = sc.form.operator();
    let hk = heat_kernel(op)?;
    let l0 = hk.spectrum().map(|s| s.values[0]).ok_or_else(|| Error::PreconditionViolation("dense path".into()))?;
    let markov = sc.form.measure().weights().iter().all(|&w| w == 0.0);
    let invariants = [0.25, 1.0]
        .iter()
        .map(|s| kernel_invariants(&hk, s / l0, 20, sc.seed, markov))
        .collect::<Result<Vec<_>, _>>()?;
    let argmax = (0..xi.len()).max_by(|&p, &q| xi[p].total_cmp(&xi[q])).expect("nonempty");
    let green = gslab_core::spectral::GreenData::new(op);
    let gc = green_consistency(&hk, &green, &[0, argmax, xi.len() / 3])?;

    let base_hk = heat_kernel(sc.base.operator())?;
    let t_int = sc.intrinsic_time;
    let bsd = &sc.base_spectral;
    let mut intrinsic_margin = f64::INFINITY;
    for s in [t_int, 2.0 * t_int, 4.0 * t_int] {
        for y in [0, argmax, xi.len() / 3, xi.len() - 1] {
            let col = base_hk.column_shifted(s, y, bsd.lambda0)?;
            for (v, p) in col.iter().zip(&bsd.phi0) {
                intrinsic_margin = intrinsic_margin.min(v / (p * bsd.phi0[y]) - 0.5);
            }
        }
    }

    let lnu = a.spectral.lambda0;
    let times = [0.1 / lnu, 1.0 / lnu, 10.0 / lnu];
    let uc_xi = uc_bound_check(&a.doob_xi, &a.profile, &times)?;
    let ground_profile = UCProfile::new(a.constants_ground.A, sc.phi1.clone())?;
    let uc_ground = uc_bound_check(&a.doob_ground, &ground_profile, &times)?;
    let uc_margin = |v: &[UcVerdict]| v.iter().map(|u| u.ln_norm - u.ln_bound).fold(f64::NEG_INFINITY, f64::max);

    let asym_times: Vec<f64> = (1..=20).map(|k| k as f64 / l0).collect();
    let asym = large_time_asymptotics(&hk, xi, &asym_times)?;
    let records = vec![
        CheckRecord::verdict("heat.invariants", invariants.iter().all(|i| i.holds)).with_detail(
            invariants
                .iter()
                .map(|i| {
                    format!(
                        "t = {:.3e}: symmetry {:.1e}, semigroup {:.1e}, min {:.3e}, mass {:.6}",
                        i.t, i.symmetry_defect, i.semigroup_defect, i.min_value, i.max_row_mass
                    )
                })
                .collect::<Vec<_>>()
                .join("; "),
        ),
        CheckRecord::measured("heat.green_consistency", gc.max_rel_discrepancy, 1e-4, gc.holds),
        CheckRecord::measured("heat.intrinsic_time", intrinsic_margin, 0.0, intrinsic_margin >= -1e-9)
            .with_detail(format!("T = {t_int:e}")),
        CheckRecord::measured("heat.uc_bound_xi", uc_margin(&uc_xi), 0.0, uc_xi.iter().all(|u| u.holds)),
        CheckRecord::measured("heat.uc_bound_ground", uc_margin(&uc_ground), 0.0, uc_ground.iter().all(|u| u.holds)),
        CheckRecord::measured(
            "heat.asymptotic_decay",
            asym.decay_rel_error,
            0.05,
            asym.decay_rel_error <= 0.05 && asym.envelope_holds && asym.strictly_decreasing,
        ),
        CheckRecord::measured("heat.log_ratio", asym.estimate_rel_error, 0.01, asym.estimate_rel_error <= 0.01),
    ];
    Ok((records, HeatSection { invariants, uc_xi, uc_ground, asymptotics: asym }))
}

fn fill(out: &mut Vec<CheckRecord>, names: &[&str], r: Result<Vec<CheckRecord>, Error>) {
    match r {
        Ok(v) => {
            debug_assert_eq!(v.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), names);
            out.extend(v)
        }
        Err(e) => out.extend(names.iter().map(|n| CheckRecord::failed(n, &e.to_string()))),
    }
}

fn csv_text<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8")
}

#[derive(Serialize)]
struct RatioRow {
    node: usize,
    x: f64,
    y: f64,
    phi0: f64,
    xi: f64,
    ratio: f64,
}

/// Runs one scenario; solver failures become error records, never a panic.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> ScenarioOutcome {
    let mut timing = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timing: &mut Vec<(String, f64)>| {
        timing.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let requested: Vec<CheckGroup> = crate::config::ALL_GROUPS.iter().copied().filter(|g| cfg.wants(*g)).collect();
    let sc = match Scenario::build(&cfg.spec(), seed) {
        Ok(sc) => sc,
        Err(e) => {
            let mut checks = Vec::new();
            for g in &requested {
                fill(&mut checks, group_checks(*g), Err(e.clone()));
            }
            return ScenarioOutcome {
                report: ScenarioReport {
                    name: cfg.name.clone(),
                    seed,
                    passed: false,
                    checks,
                    summary: None,
                    comparison: None,
                    convergence: None,
                    heat: None,
                },
                csv: Vec::new(),
                timing,
            };
        }
    };
    lap("setup", &mut timing);
    let sd_mu = ground_state(sc.form.operator()).ok();
    let xi = solve_xi(&sc.form, sc.spec.k_max).ok().map(|s| s.xi);
    lap("ground_state", &mut timing);
    let need_comparison = cfg.wants(CheckGroup::Comparison) || cfg.wants(CheckGroup::Heat);
    let (comparison, comparison_error) = if need_comparison {
        match sharp_comparison(&sc, &cfg.name) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    lap("sharp_comparison", &mut timing);
    let ctx = Ctx { cfg, sc: &sc, sd_mu, xi, comparison, comparison_error };
    let mut checks = Vec::new();
    let mut convergence = None;
    let mut heat = None;
    for g in &requested {
        match g {
            CheckGroup::Orlicz => fill(&mut checks, ORLICZ_CHECKS, orlicz_checks(&ctx)),
            CheckGroup::Form => {
                let r = form_checks(&ctx).map(|(v, t)| {
                    convergence = t;
                    v
                });
                fill(&mut checks, FORM_CHECKS, r);
            }
            CheckGroup::Spectral => fill(&mut checks, SPECTRAL_CHECKS, spectral_checks(&ctx)),
            CheckGroup::Comparison => fill(&mut checks, COMPARISON_CHECKS, comparison_checks(&ctx)),
            CheckGroup::Heat => {
                let r = heat_checks(&ctx).map(|(v, h)| {
                    heat = Some(h);
                    v
                });
                fill(&mut checks, HEAT_CHECKS, r);
            }
        }
        lap(&format!("checks.{}", format!("{g:?}").to_lowercase()), &mut timing);
    }
    let name = &ctx.cfg.name;
    let mut csv = Vec::new();
    if let (Some(sd), Some(xi)) = (&ctx.sd_mu, &ctx.xi) {
        let rows: Vec<RatioRow> = (0..xi.len())
            .map(|i| {
                let c = sc.grid.coords()[i];
                RatioRow { node: i, x: c[0], y: c[1], phi0: sd.phi0[i], xi: xi[i], ratio: sd.phi0[i] / xi[i] }
            })
            .collect();
        csv.push((format!("{name}.ratios.csv"), csv_text(&rows)));
    }
    if let Some((rep, _)) = &ctx.comparison {
        csv.push((format!("{name}.moser.csv"), csv_text(&rep.moser)));
        if !rep.ladder.is_empty() {
            csv.push((format!("{name}.ladder.csv"), csv_text(&rep.ladder)));
        }
    }
    if let Some(t) = &convergence {
        csv.push((format!("{name}.convergence.csv"), csv_text(&t.rows)));
    }
    if let Some(h) = &heat {
        csv.push((format!("{name}.asymptotics.csv"), h.asymptotics.to_csv()));
    }
    let summary = Summary {
        nodes: sc.grid.len(),
        h: sc.grid.h(),
        kappa: sc.kappa(),
        route: sc.route(),
        lambda0_base: sc.base_spectral.lambda0,
        lambda0: ctx.sd_mu.as_ref().map(|s| s.lambda0),
        intrinsic_time: Some(sc.intrinsic_time),
    };
    ScenarioOutcome {
        report: ScenarioReport {
            name: name.clone(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
            summary: Some(summary),
            comparison: ctx.comparison.map(|c| c.0),
            convergence,
            heat,
        },
        csv,
        timing,
    }
}
