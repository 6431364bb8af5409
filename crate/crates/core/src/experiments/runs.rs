use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, Run, EXPERIMENTS};
use crate::clock::{cumulative_kernel_f, ideal_step, kernel_table_csv, ClockModel, Kernel, TimeGrid};
use crate::discrete::{discrete_constraint_residual, discrete_solve, Boundary, DiscreteEvolution};
use crate::error::Result;
use crate::measurement::{embed_on_ancilla, purification_unitary, unitary_generator, InteractionSchedule, KrausSet, WindowFunction};
use crate::order::{analyze, coefficient_scan, coefficient_scan_csv, first_order_csv, first_order_magnitude, heatmap_csv, heatmap_product};
use crate::purified::{
    born_series_solve, delta_kick_closed_form, delta_kick_series, history_roundtrip_check, pm_ideal_history, pm_probability,
    pm_to_translation_check, ready_state, solver_grid, BornSeriesOptions, MeasurementEvent, PeriodicOptions,
};
use crate::tensor::{pauli, random, COperator, CVector};
use crate::twirled::{born_two_time, kuchar_naive_two_time, two_time_probability_to};

pub(super) fn dispatch(run: &mut Run) -> Result<()> {
    let cfg = run.cfg().clone();
    if cfg.experiment == "acceptance-suite" {
        acceptance_suite(run, &cfg)
    } else {
        run_named(run, &cfg)
    }
}

fn run_named(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    match cfg.experiment.as_str() {
        "kernel-fig1" => kernel_fig1(run, cfg),
        "first-order-fig2" => first_order_fig2(run, cfg),
        "heatmap-fig3" => heatmap_fig3(run, cfg),
        "ideal-equivalence" => ideal_equivalence(run, cfg),
        "nonunitarity-scan" => nonunitarity_scan(run, cfg),
        "acausal-scan" => acausal_scan(run, cfg),
        "discrete-unitarity" => discrete_unitarity(run, cfg),
        "translation-check" => translation_check(run, cfg),
        "kuchar-demo" => kuchar_demo(run, cfg),
        other => unreachable!("validated experiment name {other}"),
    }
}

/// Every other experiment with default parameters, each in its own
/// subdirectory.
fn acceptance_suite(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    for name in EXPERIMENTS.iter().filter(|n| **n != "acceptance-suite") {
        let mut sub = ExperimentConfig::new(name, cfg.output_dir.join(name), cfg.seed);
        sub.tolerances = cfg.tolerances.clone();
        run.prefix = format!("{name}/");
        if let Err(e) = run_named(run, &sub) {
            run.record("error", false, f64::NAN, 0.0, e.to_string());
        }
    }
    run.prefix.clear();
    Ok(())
}

fn energies(cfg: &ExperimentConfig, default: &[f64]) -> Vec<f64> {
    let mut e = cfg.energies.clone().unwrap_or_else(|| default.to_vec());
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

fn fmt_e(e: f64) -> String {
    format!("{e}")
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn kernel_fig1(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let grid = match cfg.grid {
        Some(g) => g.build()?,
        None => TimeGrid::new(-10.0, 10.0, 2001)?,
    };
    let tol = cfg.tolerance("kernel");
    let mut tails = Vec::new();
    let mut tail_csv = String::from("E,max_tail\n");
    for e in energies(cfg, &[1.0, 5.0, 25.0]) {
        let csv = kernel_table_csv(Kernel::Finite(e), &grid);
        run.write(&format!("kernel_E{}.csv", fmt_e(e)), &csv)?;
        let f0 = match grid.index_of(0.0) {
            Some(i) => csv.lines().nth(i + 1).and_then(|l| l.split(',').nth(2)).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN),
            None => cumulative_kernel_f(e, 0.0),
        };
        run.below(&format!("F(0)=1/2 E={}", fmt_e(e)), (f0 - 0.5).abs(), tol);
        let tail = grid
            .points()
            .iter()
            .filter(|t| t.abs() >= 1.0)
            .map(|&t| (cumulative_kernel_f(e, t) - ideal_step(t)).abs())
            .fold(0.0, f64::max);
        writeln!(tail_csv, "{},{tail:.12e}", fmt_e(e)).unwrap();
        tails.push(tail);
    }
    run.write("kernel_ideal.csv", &kernel_table_csv(Kernel::Ideal, &grid))?;
    run.write("tail.csv", &tail_csv)?;
    let detail = format!("{tails:?}");
    run.record("tail decreases with E", strictly_decreasing(&tails), *tails.last().unwrap(), 0.0, detail);
    Ok(())
}

fn first_window(cfg: &ExperimentConfig) -> (WindowFunction, f64) {
    cfg.schedule
        .as_ref()
        .and_then(|s| s.terms().iter().find(|t| !t.window.is_delta()).map(|t| (t.window, t.center)))
        .unwrap_or((WindowFunction::indicator(0.0, 1.0).expect("valid window"), 0.0))
}

/// First two windowed terms, ordered by support.
fn window_pair(cfg: &ExperimentConfig) -> (WindowFunction, f64, f64) {
    match &cfg.schedule {
        Some(s) => {
            let mut terms: Vec<_> = s.terms().iter().filter(|t| !t.window.is_delta()).collect();
            terms.sort_by(|a, b| a.support().0.partial_cmp(&b.support().0).unwrap());
            (terms[0].window, terms[0].center, terms[1].center)
        }
        None => (WindowFunction::indicator(0.0, 1.0).expect("valid window"), 0.0, 3.0),
    }
}

fn first_order_fig2(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let (window, tau) = first_window(cfg);
    let grid = match cfg.grid {
        Some(g) => g.build()?,
        None => TimeGrid::new(tau - 3.0, tau + 5.0, 801)?,
    };
    let es = energies(cfg, &[5.0, 25.0]);
    let mut kernels = vec![Kernel::Ideal];
    kernels.extend(es.iter().map(|&e| Kernel::Finite(e)));
    run.write("first_order.csv", &first_order_csv(&kernels, &window, tau, &grid)?)?;

    let times = grid.points();
    let ideal = first_order_magnitude(Kernel::Ideal, &window, tau, &times)?;
    let (_, hi) = window.support();
    let saturation = times
        .iter()
        .zip(&ideal)
        .filter(|(t, _)| **t > tau + hi)
        .map(|(_, v)| (v - window.normalization()).abs())
        .fold(0.0, f64::max);
    run.below("ideal saturates at the window integral", saturation, 1e-10);
    let distances: Vec<f64> = es
        .iter()
        .map(|&e| {
            let v = first_order_magnitude(Kernel::Finite(e), &window, tau, &times)?;
            Ok(v.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    run.record(
        "larger E is closer to the ideal curve",
        strictly_decreasing(&distances),
        *distances.last().unwrap(),
        0.0,
        format!("{distances:?}"),
    );
    Ok(())
}

fn axis(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|k| from + k as f64 * step).collect()
}

fn heatmap_fig3(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let (_, tau1, tau2) = window_pair(cfg);
    let t = cfg.t_eval.unwrap_or(10.0);
    let t1s = axis(tau1 - 1.0, tau1 + 2.0, 0.05);
    let t2s = axis(tau2 - 1.0, tau2 + 2.0, 0.05);
    let ideal = heatmap_product(Kernel::Ideal, t, &t1s, &t2s);
    run.write("heatmap_ideal.csv", &heatmap_csv(&t1s, &t2s, &ideal))?;
    let leak = t1s
        .iter()
        .zip(&ideal)
        .flat_map(|(t1, row)| t2s.iter().zip(row).filter(move |(t2, _)| **t2 > *t1).map(|(_, v)| v.abs()))
        .fold(0.0, f64::max);
    run.below("ideal product vanishes for t2 > t1", leak, 0.0);
    let default_e = cfg.clock.as_ref().map(|c| c.energy).unwrap_or(5.0);
    for e in energies(cfg, &[default_e]) {
        let values = heatmap_product(Kernel::Finite(e), t, &t1s, &t2s);
        run.write(&format!("heatmap_E{}.csv", fmt_e(e)), &heatmap_csv(&t1s, &t2s, &values))?;
        // Window centres τ + 1/2 sit 1.5 into each axis.
        let centre = (1.5 / 0.05_f64).round() as usize;
        let (t1, t2) = (t1s[centre], t2s[centre]);
        let got = values[centre][centre];
        let oracle = cumulative_kernel_f(e, t - t1) * cumulative_kernel_f(e, t1 - t2);
        run.below(&format!("product matches kernel at window centres E={}", fmt_e(e)), (got - oracle).abs(), 1e-14);
        run.above(&format!("product at window centres nonzero E={}", fmt_e(e)), got.abs(), 0.0);
    }
    Ok(())
}

fn projective(basis: &[CVector]) -> Result<COperator> {
    purification_unitary(&KrausSet::projective(basis)?)
}

fn ideal_equivalence(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let clock = match &cfg.clock {
        Some(c) => c.build()?,
        None => ClockModel::periodic(10.0, 32)?,
    };
    let h_s = cfg.schedule.as_ref().map(|s| s.free_hamiltonian().clone()).unwrap_or_else(|| COperator::zeros(2));
    let psi0 = CVector::basis(2, 0);
    let (tau1, tau2, t) = (1.0, 2.0, 3.0);
    let x_basis = [pauli::plus(), pauli::minus()];
    let z_basis = [CVector::basis(2, 0), CVector::basis(2, 1)];

    let schedule = InteractionSchedule::new(h_s.clone(), vec![2, 2])?;
    let dims = schedule.dims();
    let events = [
        MeasurementEvent { time: tau1, unitary: embed_on_ancilla(&projective(&x_basis)?, &dims, 0)? },
        MeasurementEvent { time: tau2, unitary: embed_on_ancilla(&projective(&z_basis)?, &dims, 1)? },
    ];
    let grid = TimeGrid::new(0.0, t, 31)?;
    let pm = pm_ideal_history(&schedule, &events, &ready_state(&psi0, &[2, 2]), &grid)?;

    let tol_pm = cfg.tolerance("probability");
    let tol_born = cfg.tolerance("born");
    let mut csv = String::from("tau1,tau2,outcome_k,outcome_q,P_PM,P_TO,P_Born\n");
    let (mut d_pm_to, mut d_pm_born, mut d_to_born) = (0.0f64, 0.0f64, 0.0f64);
    for (k, a) in x_basis.iter().enumerate() {
        for (q, b) in z_basis.iter().enumerate() {
            let (pi_k, pi_q) = (COperator::projector(a), COperator::projector(b));
            let to = two_time_probability_to(&clock, &h_s, &psi0, &pi_k, tau1, &pi_q, tau2)?;
            let born = born_two_time(&h_s, &psi0, &pi_k, tau1, &pi_q, tau2)?;
            let p_pm = pm_probability(&pm, &[(0, k), (1, q)], t)?.probability;
            writeln!(csv, "{tau1},{tau2},{k},{q},{p_pm:.12e},{:.12e},{born:.12e}", to.probability).unwrap();
            d_pm_to = d_pm_to.max((p_pm - to.probability).abs());
            d_pm_born = d_pm_born.max((p_pm - born).abs());
            d_to_born = d_to_born.max((to.probability - born).abs());
        }
    }
    run.write("probabilities.csv", &csv)?;
    run.below("|P_PM - P_TO|", d_pm_to, tol_pm);
    run.below("|P_PM - P_Born|", d_pm_born, tol_born);
    run.below("|P_TO - P_Born|", d_to_born, tol_born);
    Ok(())
}

fn nonunitarity_scan(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let x = pauli::x();
    let mut csv = String::from("F,s_min,s_max,unitarity_defect,series_gap\n");
    for k in 0..=10 {
        let f = 0.1 * k as f64;
        let m = delta_kick_closed_form(&x, f)?;
        let s = m.singular_values();
        let gap = m.max_abs_diff(&delta_kick_series(&x, f, 50));
        writeln!(csv, "{f:.1},{:.12e},{:.12e},{:.3e},{gap:.3e}", s[0], s[s.len() - 1], m.unitarity_defect()).unwrap();
    }
    run.write("delta_kick.csv", &csv)?;
    let half = delta_kick_closed_form(&x, 0.5)?.singular_values();
    let expect = 2.0 / 5f64.sqrt();
    run.below("singular values at F=1/2 equal 2/sqrt(5)", half.iter().map(|s| (s - expect).abs()).fold(0.0, f64::max), 1e-8);
    run.below("closed form at F=1 is unitary", delta_kick_closed_form(&x, 1.0)?.unitarity_defect(), 1e-10);

    let schedule = match &cfg.schedule {
        Some(s) => s.fold_free_hamiltonian(s.support().map_or(0.0, |r| r.0), s.support().map_or(1.0, |r| r.1))?,
        None => InteractionSchedule::empty(2, vec![])?.with_term(WindowFunction::indicator(0.0, 1.0)?, 0.0, x.scale_real(0.5))?,
    };
    let psi0 = ready_state(&CVector::basis(schedule.system_dim(), 0), schedule.ancilla_dims());
    let default_e = cfg.clock.as_ref().map(|c| c.energy).unwrap_or(5.0);
    let opts = BornSeriesOptions { tol: cfg.tolerance("series"), max_order: 40 };
    for e in energies(cfg, &[default_e]) {
        let kernel = Kernel::Finite(e);
        let grid = solver_grid(kernel, &schedule, None)?;
        let (traj, report) = born_series_solve(kernel, &schedule, &psi0, &grid, &opts)?;
        let tag = fmt_e(e);
        run.write(&format!("trajectory_E{tag}.csv"), &traj.to_csv()?)?;
        run.write(&format!("report_E{tag}.json"), &report.to_json())?;
        if !report.converged {
            run.not_converged();
        }
        run.record(&format!("series converged E={tag}"), report.converged, report.orders_used as f64, opts.max_order as f64, String::new());
        run.below(&format!("evolution residual E={tag}"), report.residual, cfg.tolerance("residual"));
        run.below(&format!("history roundtrip E={tag}"), history_roundtrip_check(&traj)?, cfg.tolerance("roundtrip"));
        let deviation = traj.norms().iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);
        run.above(&format!("norm deviates from 1 E={tag}"), deviation, 1e-3);
    }
    Ok(())
}

fn acausal_scan(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let (window, tau1, tau2) = window_pair(cfg);
    let t = cfg.t_eval.unwrap_or(10.0);
    let mut rows = coefficient_scan(&energies(cfg, &[2.0, 5.0, 10.0, 20.0]), &window, tau1, tau2, t)?;
    let ideal = analyze(Kernel::Ideal, &window, tau1, tau2, t)?;
    let magnitudes: Vec<f64> = rows.iter().map(|r| r.acausal.norm()).collect();
    let last_causal = rows.last().unwrap().causal.re;
    rows.push(ideal.clone());
    run.write("coefficients.csv", &coefficient_scan_csv(&rows))?;
    run.record("|acausal| strictly decreasing in E", strictly_decreasing(&magnitudes), *magnitudes.last().unwrap(), 0.0, format!("{magnitudes:?}"));
    run.below("ideal acausal coefficient", ideal.acausal.norm(), 0.0);
    run.below("causal coefficient near 1 at largest E", (last_causal - 1.0).abs(), cfg.tolerance("causal"));
    Ok(())
}

fn discrete_unitarity(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = (0..64).map(|_| random::unitary(4, &mut rng)).collect();
    let evo = DiscreteEvolution::new(steps, Boundary::OpenLine)?;
    let sol = discrete_solve(&evo, &random::state(4, &mut rng))?;
    let mut csv = String::from("k,norm\n");
    for (k, s) in sol.states.iter().enumerate() {
        writeln!(csv, "{k},{:.16e}", s.norm()).unwrap();
    }
    run.write("norms.csv", &csv)?;
    let tol = cfg.tolerance("norm");
    run.below("norm preserved at every step", sol.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max), tol);
    run.below("constraint residual", discrete_constraint_residual(&evo, &sol.states)?, tol);

    let e = cfg.clock.as_ref().map(|c| c.energy).unwrap_or(4.0);
    let step = PI / e;
    let schedule = InteractionSchedule::new(pauli::x().scale_real(0.7), vec![2])?;
    let copy = embed_on_ancilla(&projective(&[CVector::basis(2, 0), CVector::basis(2, 1)])?, &schedule.dims(), 0)?;
    let count = 8;
    let lattice = DiscreteEvolution::from_lattice(&schedule.free_extended(), e, &[(3, copy.clone())], count, Boundary::OpenLine)?;
    let psi0 = ready_state(&CVector::basis(2, 0), &[2]);
    let discrete = discrete_solve(&lattice, &psi0)?.states;
    let grid = TimeGrid::from_step(0.0, step, count + 1)?;
    let pm = pm_ideal_history(&schedule, &[MeasurementEvent { time: 3.0 * step, unitary: copy }], &psi0, &grid)?;
    let gap = discrete.iter().zip(pm.states()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    run.below("lattice-sampled ideal PM matches discrete solve", gap, cfg.tolerance("lattice"));
    Ok(())
}

fn translation_check(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let clock = match &cfg.clock {
        Some(c) => c.build()?,
        None => ClockModel::periodic(3.0, 16)?,
    };
    let schedule = match &cfg.schedule {
        Some(s) => s.clone(),
        None => {
            let copy = projective(&[CVector::basis(2, 0), CVector::basis(2, 1)])?;
            InteractionSchedule::empty(2, vec![2])?.with_term(WindowFunction::unit_indicator(0.0, 1.0)?, 2.0, unitary_generator(&copy)?)?
        }
    };
    let psi_s = pauli::plus();
    let t = cfg.t_eval.unwrap_or(7.0);
    let mut csv = String::from("backend,outcome,lhs,rhs,abs_diff\n");
    for (backend, ideal, tol) in [
        ("ideal", true, cfg.tolerance("translation_ideal")),
        ("finite", false, cfg.tolerance("translation_finite")),
    ] {
        let opts = PeriodicOptions { ideal, ..PeriodicOptions::default() };
        let mut worst = 0.0f64;
        for a in 0..schedule.ancilla_dims()[0] {
            let c = pm_to_translation_check(&clock, &schedule, &psi_s, a, t, &opts)?;
            writeln!(csv, "{backend},{a},{:.12e},{:.12e},{:.3e}", c.lhs, c.rhs, (c.lhs - c.rhs).abs()).unwrap();
            worst = worst.max((c.lhs - c.rhs).abs());
        }
        run.below(&format!("|lhs - rhs| {backend}"), worst, tol);
    }
    run.write("translation.csv", &csv)?;
    Ok(())
}

fn kuchar_demo(run: &mut Run, cfg: &ExperimentConfig) -> Result<()> {
    let clock = match &cfg.clock {
        Some(c) => c.build()?,
        None => ClockModel::discrete(10.0, 32)?,
    };
    let h_s = COperator::zeros(2);
    let psi0 = CVector::basis(2, 0);
    let (a, b) = (pauli::plus(), CVector::basis(2, 0));
    let tau = 1.0;
    let tau_prime = tau + clock.orthogonal_step();
    let naive = kuchar_naive_two_time(&clock, &h_s, &psi0, &a, tau, &b, tau_prime)?;
    let born = born_two_time(&h_s, &psi0, &COperator::projector(&a), tau, &COperator::projector(&b), tau_prime)?;
    let mut csv = String::from("tau1,tau2,naive,born,discrepancy\n");
    writeln!(csv, "{tau},{tau_prime:.12},{naive:.12e},{born:.12e},{:.12e}", (born - naive).abs()).unwrap();
    run.write("kuchar.csv", &csv)?;
    run.below("naive double conditioning vanishes", naive.abs(), 1e-12);
    run.below("Born oracle gives 1/4", (born - 0.25).abs(), 1e-12);
    run.record(
        "naive propagator disagrees with Born",
        (born - naive).abs() > 0.1,
        (born - naive).abs(),
        0.1,
        "naive double conditioning does not reproduce the propagator".into(),
    );
    Ok(())
}
