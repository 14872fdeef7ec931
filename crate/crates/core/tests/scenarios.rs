use qtherm::channels::Label;
use qtherm::linalg::*;
use qtherm::scenarios::*;
use qtherm::stats::{linear_slope, Estimate};
use qtherm::trajectories::{reverse_path_probability, run_parallel, traj_probability};
use qtherm::unravel::qj_kraus;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn qubit() -> CMatrix {
    pauli::sigma_z().scale_real(0.5)
}

fn coherent_state() -> DensityOp {
    let psi = Ket::normalized(vec![c(0.8, 0.0), c(0.36, 0.48)]).unwrap();
    DensityOp::new(&DensityOp::from_ket(&psi).matrix().scale_real(0.7) + &DensityOp::maximally_mixed(2).matrix().scale_real(0.3))
        .unwrap()
}

#[test]
fn thermalization_split_identities() {
    let th = build_thermalization(&coherent_state(), &qubit(), 2, 0.8).unwrap();
    assert!(th.marginal_defect <= TOL_THERM);
    assert!(th.commutator_defect <= 1e-10);
    let r = thermalization_enumeration(&th).unwrap();
    assert!((r.mean_ds_q - r.d_rho_eta).abs() < 1e-10);
    assert!((r.mean_ds_cl - (r.d_eta_tau - r.d_env)).abs() < 1e-10);
    assert!((r.mean_ds - (r.d_rho_tau - r.d_env)).abs() < 1e-10);
    assert!(r.mean_qq.abs() < 1e-10);
    assert!(r.max_energy_defect < 1e-12);
    assert!(r.max_split_defect < 1e-10);
    for p in r.paths.iter().filter(|p| p.prob > 1e-15) {
        assert!((p.du - (p.qq + p.qcl)).abs() < 1e-12);
    }
}

#[test]
fn sampled_thermalization_matches_enumeration() {
    let th = build_thermalization(&coherent_state(), &qubit(), 2, 0.8).unwrap();
    let r = thermalization_enumeration(&th).unwrap();
    let samples = run_parallel(20_000, 3, |i, rng| sample_thermalization(&th, i, rng, false).unwrap());
    let ds: Vec<f64> = samples.iter().map(|s| s.ds_q + s.ds_cl).collect();
    let qq: Vec<f64> = samples.iter().map(|s| s.totals.qq).collect();
    let e = Estimate::from_samples(&ds);
    assert!(e.within(r.mean_ds, 3.0), "{e:?} vs {}", r.mean_ds);
    let q = Estimate::from_samples(&qq);
    assert!(q.within(0.0, 3.0), "{q:?}");
    assert!(samples.iter().all(|s| s.closure_defect < 1e-12));
}

#[test]
fn thermal_input_is_reversible_on_average() {
    let tau = thermal_state(&qubit(), 0.6).unwrap();
    let th = build_thermalization(&tau, &qubit(), 2, 0.6).unwrap();
    let r = thermalization_enumeration(&th).unwrap();
    assert!(r.mean_ds.abs() < 1e-10);
    let ift = thermalization_ift(&th).unwrap();
    assert!((ift.value + ift.lambda - 1.0).abs() < 1e-10);
    assert!(ift.lambda < 1e-12);
}

/// Reverse channel of one quantum-jump step: `M_0†` and the jump operators
/// exchanged, which equals `√(q̃/q) M†` with `q̃/q = e^{δQ_cl/T}`.
fn reversed(ops: &[CMatrix]) -> Vec<CMatrix> {
    vec![ops[0].adjoint(), ops[2].clone(), ops[1].clone()]
}

#[test]
fn fluorescence_detailed_fluctuation_theorem_by_enumeration() {
    let p = FluorescenceParams {
        omega0: 1.0,
        omega_l: 1.1,
        g: 0.6,
        gamma: 1.0,
        nbar: 0.5,
    };
    let dt = 0.01;
    let steps = 6;
    let temp = p.temperature().unwrap();
    let model = fluorescence_model(&p, dt).unwrap();
    let sets: Vec<_> = (0..steps).map(|k| qj_kraus(&model, k as f64 * dt).unwrap()).collect();
    for s in &sets {
        assert_eq!(s.labels(), &[Label::NoJump, Label::Jump(0), Label::Jump(1)]);
    }
    let rev: Vec<Vec<CMatrix>> = sets.iter().map(|s| reversed(s.ops())).collect();
    let tol = sets.iter().map(|s| s.tol_cptp()).fold(0.0, f64::max) * steps as f64;
    let pops = p.thermal_populations();
    let basis = [Ket::basis(2, 0), Ket::basis(2, 1)];
    let energies = [0.5 * p.omega0, -0.5 * p.omega0];

    let mut total_fwd = 0.0;
    let mut total_rev = 0.0;
    let mut jarzynski = 0.0;
    let mut max_ratio_defect = 0.0_f64;
    let n_paths = 3usize.pow(steps as u32);
    for code in 0..n_paths {
        let alphas: Vec<usize> = (0..steps).map(|k| code / 3usize.pow(k as u32) % 3).collect();
        let fwd_ops: Vec<&CMatrix> = alphas.iter().enumerate().map(|(k, &a)| &sets[k].ops()[a]).collect();
        let rev_ops: Vec<&CMatrix> = alphas.iter().enumerate().map(|(k, &a)| &rev[k][a]).collect();
        let qcl: f64 = alphas
            .iter()
            .map(|&a| match a {
                1 => -p.omega0,
                2 => p.omega0,
                _ => 0.0,
            })
            .sum();
        for l in 0..2 {
            for m in 0..2 {
                let pf = traj_probability(pops[l], &basis[l], &fwd_ops, &basis[m]).unwrap();
                let pr = reverse_path_probability(pops[m], &basis[m], &rev_ops, &basis[l]).unwrap();
                total_fwd += pf;
                total_rev += pr;
                if pf > 1e-300 {
                    let predicted = pops[m] / pops[l] * (qcl / temp).exp();
                    max_ratio_defect = max_ratio_defect.max((pr / pf / predicted - 1.0).abs());
                    // Jarzynski weight e^{-(W + Q_q)/T} with W + Q_q = ΔE − Q_cl.
                    let w_qq = energies[m] - energies[l] - qcl;
                    jarzynski += pf * (-w_qq / temp).exp();
                }
            }
        }
    }
    assert!((total_fwd - 1.0).abs() < tol, "forward total {total_fwd}");
    assert!(max_ratio_defect < 1e-9, "ratio defect {max_ratio_defect}");
    assert!((total_rev - 1.0).abs() < tol, "reverse total {total_rev}, tol {tol}");
    assert!((jarzynski - 1.0).abs() < tol, "Jarzynski {jarzynski}, tol {tol}");
}

#[test]
fn fluorescence_ledgers_close_and_match_closed_forms() {
    let p = FluorescenceParams::default();
    let mut proto = FluorescenceProtocol::new(0.005, 400);
    proto.record_trajectories = 3;
    let out = run_fluorescence(&p, &proto, 500, 8).unwrap();
    for t in &out.trajectories {
        assert!(t.closure_defect <= 1e-12);
        assert!(t.closed_form_defect <= out.closed_form_tolerance);
    }
    assert_eq!(out.rows().count(), 3 * (400 + 2));
}

#[test]
fn fluorescence_steady_fluxes_at_one_grid_point() {
    let p = FluorescenceParams {
        omega0: 1.0,
        omega_l: 0.7,
        g: 0.8,
        gamma: 1.0,
        nbar: 0.2,
    };
    let mut proto = FluorescenceProtocol::new(0.005, 3000);
    proto.flux_window = Some((1000, 3000));
    let out = run_fluorescence(&p, &proto, 3000, 5).unwrap();
    let f = out.summary.fluxes.unwrap();
    let closed = fluorescence_fluxes(&p);
    assert!((f.w_dot - closed.w_dot).abs() <= 3.0 * f.se_w_dot, "{f:?}");
    assert!((f.qcl_dot - closed.qcl_dot).abs() <= 3.0 * f.se_qcl_dot, "{f:?}");
    assert!((f.qq_dot - closed.qq_dot).abs() <= 3.0 * f.se_qq_dot, "{f:?}");
}

fn monitor() -> MonitorParams {
    MonitorParams {
        omega0: 1.0,
        gamma_m: 0.25,
        dt: 1e-3,
    }
}

fn plus() -> Ket {
    Ket::normalized(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap()
}

#[test]
fn monitored_z_is_a_martingale() {
    let p = monitor();
    let psi = Ket::normalized(vec![c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
    let mut proto = MonitorProtocol::new(2000, psi);
    proto.snapshot_every = Some(500);
    let out = run_monitoring(&p, &proto, 4000, 12).unwrap();
    let z0 = 0.36 - 0.64;
    for i in 1..out.snapshot_times.len() {
        let zs: Vec<f64> = out
            .trajectories
            .iter()
            .map(|t| t.snapshots[i][0].norm_sqr() - t.snapshots[i][1].norm_sqr())
            .collect();
        let e = Estimate::from_samples(&zs);
        assert!(e.within(z0, 3.0), "t = {}: {e:?}", out.snapshot_times[i]);
    }
}

#[test]
fn monitored_quantum_heat_vanishes_on_average() {
    let p = monitor();
    let mut proto = MonitorProtocol::new(1000, plus());
    proto.keep_increments = true;
    let out = run_monitoring(&p, &proto, 100, 6).unwrap();
    let pooled = out.pooled_increments();
    assert_eq!(pooled.len(), 100_000);
    let e = Estimate::from_samples(&pooled);
    assert!(e.within(0.0, 3.0), "{e:?}");
    for t in &out.trajectories {
        assert!(t.closure_defect <= 1e-12);
        assert!(t.closed_form_defect <= out.closed_form_tolerance);
    }
}

#[test]
fn monitored_coherence_decays_at_four_gamma_m() {
    let p = monitor();
    let mut proto = MonitorProtocol::new(2000, plus());
    proto.snapshot_every = Some(100);
    let out = run_monitoring(&p, &proto, 10_000, 2).unwrap();
    let states = out.ensemble_states();
    let y: Vec<f64> = states.iter().map(|r| (2.0 * r[(0, 1)].norm()).ln()).collect();
    let rate = -linear_slope(&out.snapshot_times, &y);
    assert!((rate / (4.0 * p.gamma_m) - 1.0).abs() < 0.05, "rate {rate}");
}

/// Probability-integral transform of every `I` under the two-Gaussian law
/// conditioned on the pre-step population, binned and tested for uniformity.
#[test]
fn record_histogram_follows_two_gaussian_law() {
    let p = monitor();
    let mut proto = MonitorProtocol::new(200, plus());
    proto.keep_increments = true;
    let out = run_monitoring(&p, &proto, 200, 31).unwrap();
    let sigma = 1.0 / (2.0 * p.kappa() * p.dt).sqrt();
    let up = Normal::new(1.0, sigma).unwrap();
    let down = Normal::new(-1.0, sigma).unwrap();
    let bins = 20;
    let mut counts = vec![0.0; bins];
    let mut n = 0.0;
    for t in &out.trajectories {
        for &(i, p_e) in &t.outcomes {
            let u = p_e * up.cdf(i) + (1.0 - p_e) * down.cdf(i);
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1.0;
            n += 1.0;
        }
    }
    let e = n / bins as f64;
    let chi2: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
    let pval = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(pval > 0.01, "χ² = {chi2}, p = {pval}");
}

#[test]
fn excited_state_records_center_on_plus_one() {
    let p = monitor();
    let mut proto = MonitorProtocol::new(20_000, Ket::basis(2, 0));
    proto.keep_increments = true;
    let out = run_monitoring(&p, &proto, 1, 0).unwrap();
    let is: Vec<f64> = out.trajectories[0].outcomes.iter().map(|o| o.0).collect();
    let e = Estimate::from_samples(&is);
    assert!(e.within(1.0, 3.0), "{e:?}");
    let var = e.std_error.powi(2) * is.len() as f64;
    let expected = 1.0 / (2.0 * p.kappa() * p.dt);
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    assert!(out.pooled_increments().iter().all(|q| q.abs() < 1e-15));
}
