//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed; the process
//! exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use bracket_steer::library::{rolling_disc_system, unicycle_system, uniform_probes};
use bracket_steer::output::{run_scenario, write_run, Format};
use bracket_steer::scenarios::Setup;
use bracket_steer::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Contraction constant. The disc loop is invariant under rotation and does not
/// depend on x4, so the worst case over the box is a function of |y0| and the
/// heading relative to y0; a 61 x 720 grid scan of that pair gives an infimum
/// of 0.0517 at |y0| = 2, eps = 0.25.
const CONTRACTION_C: f64 = 0.05;

fn verdict(id: u32, title: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id}: {title} ({detail})");
    pass
}

fn disc_selection() -> BracketSelection {
    BracketSelection::new(vec![1], vec![(1, 2)], vec![1]).unwrap()
}

fn single(bundle: &ScenarioBundle) -> &bracket_steer::scenarios::SingleSetup {
    match &bundle.setup {
        Setup::Single(s) => s,
        Setup::Formation(_) => panic!("expected a single-system scenario"),
    }
}

fn formation(bundle: &ScenarioBundle) -> &bracket_steer::scenarios::FormationSetup {
    match &bundle.setup {
        Setup::Formation(f) => f,
        Setup::Single(_) => panic!("expected a formation scenario"),
    }
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

fn criterion_1_rolling_disc_reproduction() -> bool {
    let bundle = builtin_scenario("rolling-disc").unwrap();
    let s = single(&bundle);
    let expected = bundle.expected().unwrap().clone();
    let start = Instant::now();
    let traj =
        simulate_pi_epsilon(&s.system, &s.selection, &bundle.gains, &s.x0, &bundle.sim).unwrap();
    let runtime = start.elapsed().as_secs_f64();

    let late_max = traj
        .dense_times
        .iter()
        .zip(&traj.y_error)
        .filter(|(t, _)| **t >= expected.settle_time)
        .map(|(_, e)| *e)
        .fold(0.0, f64::max);
    let [w0, w1] = expected.still_window.unwrap();
    let window: Vec<&DVector<f64>> = traj
        .dense_times
        .iter()
        .zip(&traj.dense_states)
        .filter(|(t, _)| **t >= w0 && **t <= w1)
        .map(|(_, x)| x)
        .collect();
    let var3 = spread(window.iter().map(|x| x[2]));
    let var4 = spread(window.iter().map(|x| x[3]));

    let oracle = common::oracle_disc(
        s.x0.as_slice(),
        bundle.gains.epsilon,
        bundle.gains.gamma,
        50.0,
        8,
    );
    let oracle_late = oracle
        .iter()
        .filter(|(t, _)| *t >= expected.settle_time)
        .map(|(_, x)| common::norm(&x[0..2]))
        .fold(0.0, f64::max);

    let tol = expected.still_tolerance.unwrap();
    let pass = late_max <= expected.rho && var3 < tol && var4 < tol && runtime < 1.0;
    verdict(
        1,
        "rolling disc eps=1 gamma=5 settles below rho=0.1 by t=20",
        pass,
        &format!(
            "max |y| for t>=20 = {late_max:.4}, oracle {oracle_late:.4}; x3 spread {var3:.4}, x4 spread {var4:.4}; runtime {runtime:.3}s"
        ),
    )
}

fn criterion_2_unicycle_leader_following() -> bool {
    let bundle = builtin_scenario("unicycle-leader").unwrap();
    let f = formation(&bundle);
    let expected = bundle.expected().unwrap().clone();
    let start = Instant::now();
    let traj =
        simulate_formation(&f.agents, &f.leader, &f.x0s, &bundle.gains, &bundle.sim).unwrap();
    let runtime = start.elapsed().as_secs_f64();
    assert!(traj.all_succeeded());
    let err = formation_error(&traj, 0).unwrap();
    let initial = err[0];
    let late_max = traj
        .dense_times
        .iter()
        .zip(&err)
        .filter(|(t, _)| **t >= expected.settle_time)
        .map(|(_, e)| *e)
        .fold(0.0, f64::max);

    let agent = &f.agents[0];
    let oracle = common::oracle_unicycle(
        f.x0s[0].as_slice(),
        f.leader.x0().as_slice(),
        agent.offset.as_slice(),
        bundle.gains.epsilon,
        agent.gamma,
        60.0,
        8,
    );
    let oracle_late = oracle
        .iter()
        .filter(|(t, _, _)| *t >= expected.settle_time)
        .map(|(_, x, l)| {
            common::norm(
                &(0..3)
                    .map(|i| x[i] - l[i] - agent.offset[i])
                    .collect::<Vec<_>>(),
            )
        })
        .fold(0.0, f64::max);
    let run = &traj.agents[0].trajectory;
    let oracle_gap = oracle
        .iter()
        .step_by(8)
        .zip(&run.sample_states)
        .map(|((_, xo, _), xs)| common::norm(&(0..3).map(|i| xo[i] - xs[i]).collect::<Vec<_>>()))
        .fold(0.0, f64::max);

    let pass = (initial - 1.259702).abs() < 1e-6 && late_max <= expected.rho && runtime < 5.0;
    verdict(
        2,
        "unicycle follows figure-eight leader within 0.3 for t>=30",
        pass,
        &format!(
            "d(0) = {initial:.6}; max d for t>=30 = {late_max:.4}, oracle {oracle_late:.4}; max sample gap to oracle {oracle_gap:.2e}; runtime {runtime:.3}s"
        ),
    )
}

fn criterion_3_bracket_oracle_equivalence() -> bool {
    let mut worst: f64 = 0.0;
    for (sys, dim) in [(rolling_disc_system(), 4), (unicycle_system(), 3)] {
        let probes = uniform_probes(&vec![-3.0; dim], &vec![3.0; dim], 100, 11);
        for x in &probes {
            for (j1, j2) in [(1, 2), (2, 1)] {
                let analytic = sys.lie_bracket(j1, j2, x).unwrap();
                let f = sys.field(j1).unwrap();
                let g = sys.field(j2).unwrap();
                let fd = finite_diff_bracket(|z| f.eval(z), |z| g.eval(z), x, 1e-6).unwrap();
                let rel = (&analytic - &fd).norm() / analytic.norm().max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
            }
        }
    }
    verdict(
        3,
        "analytic brackets match finite-difference brackets",
        worst <= 1e-6,
        &format!("worst relative gap {worst:.2e} over 2 x 100 states"),
    )
}

fn criterion_4_averaging_identity() -> bool {
    // Sign pin: a pure bracket oscillation on the unicycle at x3 = 0 moves the
    // state by eps a12 [f1, f2] = eps a12 (0, -1, 0).
    let uni = unicycle_system();
    let sel = BracketSelection::new(vec![1, 2], vec![(1, 2)], vec![1]).unwrap();
    let eps = 0.1;
    let a12 = 0.5;
    let held = HeldControl::from_coefficients(&sel, 2, eps, DVector::from_vec(vec![0.0, 0.0, a12]));
    let x0 = [0.0, 0.0, 0.0];
    let rhs = |t: f64, x: &[f64]| {
        let u = held.at(t);
        common::unicycle_rhs(x, [u[0], u[1]])
    };
    let x1 = common::rk4_fixed(&rhs, 0.0, eps, &x0, 20_000);
    let bracket = uni
        .lie_bracket(1, 2, &DVector::from_vec(x0.to_vec()))
        .unwrap();
    let along: f64 =
        (0..3).map(|i| x1[i] * bracket[i]).sum::<f64>() / (eps * a12 * bracket.norm_squared());
    let sign_ok = (along - 1.0).abs() < 0.1;

    // Identity: (1/eps) int int [u_i1(s1) u_i2(s2) - u_i2(s1) u_i1(s2)] = -2 a_i1i2
    // for the oscillatory parts, so -1/2 of it recovers a_i1i2.
    let mut worst: f64 = 0.0;
    let scenarios = [
        (rolling_disc_system(), disc_selection(), 4usize),
        (unicycle_system(), sel.clone(), 3usize),
    ];
    for (sys, sel, dim) in scenarios {
        let eps = 0.25;
        let gains = ControllerGains::new(eps, 5.0, DVector::from_vec(vec![0.3; sys.n1()])).unwrap();
        for x in uniform_probes(&vec![-2.0; dim], &vec![2.0; dim], 10, 5) {
            let a = steering_coefficients(&sys, &sel, &gains, &x).unwrap();
            let target = a[sel.s1().len()];
            let held = held_control(&sys, &sel, &gains, &x).unwrap();
            let (i1, i2) = sel.s2()[0];
            let held = &held;
            let u = |k: usize| move |t: f64| held.oscillatory_at(t)[k - 1];
            let v12 = common::iterated_integral(u(i1), u(i2), eps, 40_000);
            let v21 = common::iterated_integral(u(i2), u(i1), eps, 40_000);
            let antisym = (v12 - v21) / eps;
            let recovered = -0.5 * antisym;
            let rel = (recovered - target).abs() / target.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    verdict(
        4,
        "bracket averaging identity and sign",
        sign_ok && worst <= 1e-6,
        &format!("brute-force displacement / (eps a12) along [f1,f2] = {along:.4}; worst relative gap {worst:.2e}"),
    )
}

fn criterion_5_one_step_contraction() -> bool {
    let sys = rolling_disc_system();
    let sel = disc_selection();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut passed = 0;
    let mut total = 0;
    let mut worst_c = f64::INFINITY;
    for eps in [0.25, 0.125] {
        let gains = ControllerGains::new(eps, 5.0, DVector::zeros(2)).unwrap();
        let cfg = SimConfig::new(eps, 40, 1).unwrap();
        for _ in 0..50 {
            let r: f64 = rng.gen_range(0.5..=2.0);
            let th: f64 = rng.gen_range(0.0..2.0 * PI);
            let x0 = DVector::from_vec(vec![
                r * th.cos(),
                r * th.sin(),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            ]);
            let traj = simulate_pi_epsilon(&sys, &sel, &gains, &x0, &cfg).unwrap();
            let y1 = *traj.sample_y_error.last().unwrap();
            total += 1;
            if y1 <= (1.0 - CONTRACTION_C * gains.gamma * eps) * r {
                passed += 1;
            }
            worst_c = worst_c.min((1.0 - y1 / r) / (gains.gamma * eps));
        }
    }
    verdict(
        5,
        "one-step contraction with calibrated c",
        passed == total,
        &format!("{passed}/{total} within (1 - c gamma eps), c = {CONTRACTION_C}; smallest observed c {worst_c:.4}"),
    )
}

fn criterion_6_epsilon_sweep() -> bool {
    let sys = rolling_disc_system();
    let sel = disc_selection();
    let gains = ControllerGains::new(0.2, 2.0, DVector::zeros(2)).unwrap();
    let x0 = DVector::from_vec(vec![1.0, 0.5, 0.0, 0.0]);
    let rows = epsilon_sweep(&sys, &sel, &gains, &x0, 2.0, &[0.2, 0.1, 0.05], None).unwrap();
    let devs: Vec<f64> = rows.iter().map(|r| r.max_deviation).collect();
    let ratios: Vec<f64> = devs.windows(2).map(|w| w[1] / w[0]).collect();
    let pass = devs.windows(2).all(|w| w[1] < w[0]) && ratios.iter().all(|&q| q <= 0.8);
    verdict(
        6,
        "epsilon sweep approaches the averaged flow",
        pass,
        &format!("deviations {devs:.4?}, ratios {ratios:.3?}"),
    )
}

fn criterion_7_fidelity_and_determinism() -> bool {
    let mut mismatches = 0usize;
    let mut checked = 0usize;

    let disc = builtin_scenario("rolling-disc").unwrap();
    let s = single(&disc);
    let traj = simulate_pi_epsilon(&s.system, &s.selection, &disc.gains, &s.x0, &disc.sim).unwrap();
    for k in 0..traj.len() {
        let hold = &traj.sample_states[traj.dense_interval[k]];
        let u = control_value(
            &s.system,
            &s.selection,
            &disc.gains,
            traj.dense_times[k],
            hold,
        )
        .unwrap();
        checked += 1;
        if u != traj.dense_controls[k] {
            mismatches += 1;
        }
    }

    let uni = builtin_scenario("unicycle-leader").unwrap();
    let f = formation(&uni);
    let ftraj = simulate_formation(&f.agents, &f.leader, &f.x0s, &uni.gains, &uni.sim).unwrap();
    let run = &ftraj.agents[0].trajectory;
    let ctrl = follower_controller(&f.agents[0], &uni.gains);
    for k in 0..run.len() {
        let j = run.dense_interval[k];
        let start = run.dense_interval.iter().position(|&i| i == j).unwrap();
        let u = ctrl
            .control(
                run.dense_times[k],
                &run.sample_states[j],
                &ftraj.leader_states[start],
            )
            .unwrap();
        checked += 1;
        if u != run.dense_controls[k] {
            mismatches += 1;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for name in ["rolling-disc", "unicycle-leader"] {
        let bundle = builtin_scenario(name).unwrap();
        let mut bytes = Vec::new();
        for run in 0..2 {
            let art = run_scenario(&bundle, 0.1).unwrap();
            let path = dir.path().join(format!("{name}-{run}.csv"));
            write_run(&art, &path, Format::Csv).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        identical &= bytes[0] == bytes[1];
    }

    verdict(
        7,
        "stored controls recompute exactly and runs are byte-identical",
        mismatches == 0 && identical,
        &format!(
            "{mismatches} mismatches over {checked} recorded controls; CSV identical: {identical}"
        ),
    )
}

fn criterion_8_validator_coverage() -> bool {
    let disc = builtin_scenario("rolling-disc").unwrap();
    let uni = builtin_scenario("unicycle-leader").unwrap();
    let disc_cert = &single(&disc).certificate;
    let uni_cert = &formation(&uni).certificates[0];

    let sys = rolling_disc_system();
    let gains = ControllerGains::new(1.0, 5.0, DVector::zeros(2)).unwrap();
    let probes = uniform_probes(&[-3.0; 4], &[3.0; 4], 10, 0);
    let too_many = BracketSelection::new(vec![1, 2], vec![(1, 2)], vec![1]).unwrap();
    let rejections = [
        (
            validate_selection(&sys, &too_many, &probes, &gains).err(),
            "|S1| + |S2| = n1",
        ),
        (
            BracketSelection::new(vec![], vec![(1, 2), (2, 1)], vec![3, 3]).err(),
            "kappa pairwise distinct",
        ),
        (
            BracketSelection::new(vec![1], vec![(2, 2)], vec![1]).err(),
            "i1 != i2",
        ),
    ];
    let named: Vec<bool> = rejections
        .iter()
        .map(|(err, inv)| err.as_ref().and_then(|e| e.invariant()) == Some(*inv))
        .collect();

    let pass = disc_cert.rank_ok
        && uni_cert.rank_ok
        && disc_cert.worst_condition <= 1.0 + 1e-9
        && named.iter().all(|&b| b);
    verdict(
        8,
        "validator certifies built-ins and names violated invariants",
        pass,
        &format!(
            "disc worst condition {:.12}, unicycle worst condition {:.4}; named rejections {named:?}",
            disc_cert.worst_condition, uni_cert.worst_condition
        ),
    )
}

fn main() -> std::process::ExitCode {
    let criteria: [fn() -> bool; 8] = [
        criterion_1_rolling_disc_reproduction,
        criterion_2_unicycle_leader_following,
        criterion_3_bracket_oracle_equivalence,
        criterion_4_averaging_identity,
        criterion_5_one_step_contraction,
        criterion_6_epsilon_sweep,
        criterion_7_fidelity_and_determinism,
        criterion_8_validator_coverage,
    ];
    let mut failed = 0;
    for (i, criterion) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(criterion) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(_) => {
                println!("[FAIL] criterion {}: panicked", i + 1);
                failed += 1;
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
