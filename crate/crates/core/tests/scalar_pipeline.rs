//! End-to-end runs of the scalar benchmark through the public API.
use ampc_core::checks::{
    audit_descent_inequality, iss_diagnostic, DescentTerms, IssConfig, IssTarget,
};
use ampc_core::data::{generate_dataset, inputs_of, sample_states, states_of, value_targets};
use ampc_core::exec::Sequential;
use ampc_core::policyfit::{
    distance_to_signed_pair, estimate_eps_pi, train_policy_bc, train_policy_il, LookAhead,
};
use ampc_core::presets;
use ampc_core::simulate::{closed_loop, linspace, NetPolicy, NoClock};
use ampc_core::valuefit::{estimate_eps_v, ValueModel};

#[test]
fn il_lands_on_the_optimal_set_and_bc_averages_it() {
    let problem = presets::quad1d_problem();
    let value = ValueModel::exact_quad1d();
    let states = sample_states(&presets::quad1d_plan(2000, -1.0, 1.0), 5).unwrap();
    let records = generate_dataset(
        &problem,
        &states,
        &presets::quad1d_solver_config(),
        6,
        &Sequential,
    )
    .unwrap();

    // Labels are x or -x, both signs present.
    let labels = inputs_of(&records);
    assert!(records
        .iter()
        .all(|r| distance_to_signed_pair(r.x[0], r.u_mpc[0]) < 1e-6));
    let flips = records
        .iter()
        .filter(|r| r.x[0].abs() > 0.1 && r.u_mpc[0] * r.x[0] < 0.0)
        .count();
    assert!(flips > 100 && flips < labels.len() - 100, "{flips}");

    // The value targets are x^2, so the exact value has zero error on them.
    let t = value_targets(&records).unwrap();
    assert!(estimate_eps_v(&value, &t.states, &t.totals()).unwrap().abs < 1e-9);

    let look = LookAhead::new(&problem, &value);
    let cfg = presets::quad1d_train_config();
    let arch = presets::quad1d_policy_arch();
    let il = train_policy_il(&states_of(&records), look, &arch, &cfg, 1).unwrap();
    let bc = train_policy_bc(
        &states_of(&records),
        &labels,
        &problem.model,
        &arch,
        &cfg,
        1,
    )
    .unwrap();
    let test = linspace(-1.0, 1.0, 101);
    let sup_il = test
        .iter()
        .map(|&x| distance_to_signed_pair(x, il.policy.act(&[x]).unwrap()[0]))
        .fold(0.0, f64::max);
    let max_bc = test
        .iter()
        .map(|&x| bc.policy.act(&[x]).unwrap()[0].abs())
        .fold(0.0, f64::max);
    assert!(sup_il < 0.05, "il sup distance {sup_il}");
    assert!(max_bc < 0.15, "bc max |u| {max_bc}");

    let eps = estimate_eps_pi(&il.policy, &test, &look, 1000).unwrap();
    assert!(eps.abs < 1e-2 && eps.rel <= eps.abs, "{eps:?}");

    // Closed loop from 0.9 with the IL policy reaches 0 in one step and stays there.
    let traj = closed_loop(
        &mut NetPolicy::new(&il.policy),
        &problem,
        Some(&value),
        &[0.9],
        100,
        &NoClock,
    )
    .unwrap();
    let d = iss_diagnostic(&traj.states, 1, IssTarget::Norm, &IssConfig::default());
    assert!(d.pass && d.offset <= 0.05, "{d:?}");

    // Lemma-style descent check on the grid with the measured policy error.
    let terms = DescentTerms {
        eps_pi: eps.abs,
        tolerance: 1e-6,
    };
    let (audit, margins) = audit_descent_inequality(
        &mut NetPolicy::new(&il.policy),
        &look,
        &problem,
        &presets::quad1d_solver_config(),
        &linspace(-1.0, 1.0, 401),
        terms,
        2,
    )
    .unwrap();
    assert!(audit.pass, "{audit}");
    assert_eq!(margins.len(), 401);
}
