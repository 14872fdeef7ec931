use qtherm::linalg::*;
use qtherm::scenarios::*;
use qtherm::stats::linear_slope;
use qtherm::trajectories::{run_parallel, PROB_FLOOR};
use qtherm::unravel::*;

fn decay_model(dt: f64) -> LindbladModel {
    LindbladModel::new(
        OpFn::Fixed(pauli::sigma_x().scale_real(0.4)),
        vec![OpFn::Fixed(pauli::sigma_minus())],
        Schedule::Constant(0.0),
        dt,
    )
    .unwrap()
}

#[test]
fn completeness_defect_is_second_order() {
    let dts = [1e-2, 1e-3, 1e-4];
    let defects: Vec<f64> = dts.iter().map(|&dt| qj_kraus(&decay_model(dt), 0.0).unwrap().cptp_defect()).collect();
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = defects.iter().map(|d| d.ln()).collect();
    let slope = linear_slope(&x, &y);
    assert!((slope - 2.0).abs() < 0.1, "slope {slope}, defects {defects:?}");
}

#[test]
fn jump_ensemble_tracks_master_equation() {
    let p = FluorescenceParams {
        omega0: 1.0,
        omega_l: 1.0,
        g: 0.8,
        gamma: 1.0,
        nbar: 0.3,
    };
    let mut proto = FluorescenceProtocol::new(0.005, 600);
    proto.snapshot_every = Some(100);
    proto.initial = InitialCondition::Ket(Ket::basis(2, 1));
    let out = run_fluorescence(&p, &proto, 4000, 21).unwrap();
    let model = fluorescence_model(&p, 0.005).unwrap();
    let master = evolve_master(&out.rho0, &model, &out.snapshot_times).unwrap();
    for (avg, exact) in out.ensemble_states().iter().zip(&master) {
        let d = trace_distance(avg, exact.matrix()).unwrap();
        assert!(d <= 0.03, "trace distance {d}");
    }
}

#[test]
fn diffusive_ensemble_tracks_master_equation() {
    let p = MonitorParams {
        omega0: 1.0,
        gamma_m: 0.5,
        dt: 1e-3,
    };
    let model = monitor_model(&p).unwrap();
    let psi0 = Ket::normalized(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
    let (steps, every) = (800, 200);
    let finals: Vec<Vec<Ket>> = run_parallel(3000, 4, |_, rng| {
        let mut psi = psi0.clone();
        let mut snaps = vec![psi.clone()];
        for k in 0..steps {
            let (next, _, w) = qsd_step(&psi, &model, k as f64 * p.dt, rng).unwrap();
            assert!(w > PROB_FLOOR);
            psi = next;
            if (k + 1) % every == 0 {
                snaps.push(psi.clone());
            }
        }
        snaps
    });
    let times: Vec<f64> = (0..=steps / every).map(|i| (i * every) as f64 * p.dt).collect();
    let master = evolve_master(&DensityOp::from_ket(&psi0), &model, &times).unwrap();
    for (i, exact) in master.iter().enumerate() {
        let avg = ensemble_state(finals.iter().map(|s| s[i].amplitudes()));
        let d = trace_distance(&avg, exact.matrix()).unwrap();
        assert!(d <= 0.03, "t = {}: trace distance {d}", times[i]);
    }
}

#[test]
fn master_solution_preserves_trace_and_relaxes() {
    let model = decay_model(1e-3);
    let grid: Vec<f64> = (0..=10).map(|i| 4.0 * i as f64).collect();
    let states = evolve_master(&DensityOp::from_ket(&Ket::basis(2, 0)), &model, &grid).unwrap();
    for s in &states {
        assert!((s.matrix().trace().re - 1.0).abs() < 1e-12);
    }
    // Steady state of resonant driving Ω = 0.8 and decay γ = 1: p_e = Ω²/(γ² + 2Ω²).
    let pe = states.last().unwrap().matrix()[(0, 0)].re;
    let expected = 0.64 / (1.0 + 2.0 * 0.64);
    assert!((pe - expected).abs() < 1e-3, "{pe} vs {expected}");
}
