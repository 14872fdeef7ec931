use qtherm::linalg::{pauli, thermal_state, CMatrix};
use qtherm::scenarios::{
    build_thermalization, enumerate_fluorescence, fluorescence_master_summary, monitor_master_summary, run_fluorescence,
    run_monitoring, sample_thermalization, thermalization_enumeration, thermalization_ift, FluorescenceProtocol,
    InitialCondition, LedgerRow, MonitorProtocol, Thermalization,
};
use qtherm::thermo::{EnsembleSummary, TrajectoryTotals};
use qtherm::trajectories::{run_parallel, PROB_FLOOR};

use crate::artifacts::{csv_bytes, Artifacts};
use crate::config::{Mode, RunConfig, ScenarioName};
use crate::CliError;

/// Validates `config` and runs it, on a dedicated pool when `threads` is set.
pub fn run(config: &RunConfig) -> Result<Artifacts, CliError> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| execute(config)),
        None => execute(config),
    }
}

/// Runs `config` on the current rayon pool without validating it first.
pub fn execute(config: &RunConfig) -> Result<Artifacts, CliError> {
    let (rows, summary) = match config.scenario {
        ScenarioName::Thermalize => thermalize(config)?,
        ScenarioName::Fluorescence => fluorescence(config)?,
        ScenarioName::Monitor => monitor(config)?,
    };
    let csv = csv_bytes(&rows, 2)?;
    Artifacts::new(config, csv, summary)
}

fn qubit_hamiltonian(omega0: f64) -> CMatrix {
    pauli::sigma_z().scale_real(omega0 / 2.0)
}

fn thermalize(config: &RunConfig) -> Result<(Vec<LedgerRow>, EnsembleSummary), CliError> {
    let t = &config.thermalize;
    let h = qubit_hamiltonian(t.omega0);
    let tau = thermal_state(&h, t.temperature)?;
    let rho = t.initial.density(&tau)?;
    let th = build_thermalization(&rho, &h, 2, t.temperature)?;
    let report = thermalization_enumeration(&th)?;
    let ift = thermalization_ift(&th)?;

    let mut summary = match config.mode {
        Mode::Sample => {
            let seed = config.seed.expect("validated");
            let keep = config.csv_trajectories;
            let full_rank = rho.spectrum().0.iter().all(|&p| p > PROB_FLOOR);
            let samples = run_parallel(config.n_traj, seed, |i, rng| sample_thermalization(&th, i, rng, i < keep));
            let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
            let totals: Vec<TrajectoryTotals> = samples.iter().map(|s| s.totals).collect();
            let mut summary = EnsembleSummary::from_totals(&totals, Some(seed), full_rank);
            summary.diagnostics.insert(
                "max_closure_defect".into(),
                samples.iter().map(|s| s.closure_defect).fold(0.0, f64::max),
            );
            let rows = samples.into_iter().flat_map(|s| s.rows).collect();
            return Ok((rows, with_thermalization_diagnostics(summary, &th, &report, &ift)));
        }
        Mode::Enumerate => EnsembleSummary {
            mean_qcl: report.mean_qcl,
            mean_qq: report.mean_qq,
            mean_entropy: Some(report.mean_ds),
            ift_value: Some(ift.value),
            lambda_abs: Some(ift.lambda),
            ..EnsembleSummary::default()
        },
        Mode::Master => {
            let out = th.kraus.apply(rho.matrix())?;
            let delta_u = (&h * &out).trace().re - rho.expectation(&h);
            let delta_env = th.tau_e_out.expectation(&h) - th.tau_e.expectation(&h);
            EnsembleSummary {
                mean_qcl: -delta_env,
                mean_qq: delta_u + delta_env,
                ..EnsembleSummary::default()
            }
        }
    };
    summary.seed = None;
    Ok((Vec::new(), with_thermalization_diagnostics(summary, &th, &report, &ift)))
}

fn with_thermalization_diagnostics(
    mut s: EnsembleSummary,
    th: &Thermalization,
    report: &qtherm::scenarios::ThermalizationReport,
    ift: &qtherm::scenarios::TpmIftReport,
) -> EnsembleSummary {
    let d = &mut s.diagnostics;
    d.insert("theta".into(), th.theta);
    d.insert("marginal_defect".into(), th.marginal_defect);
    d.insert("exact_mean_entropy".into(), report.mean_ds);
    d.insert("exact_mean_ds_q".into(), report.mean_ds_q);
    d.insert("exact_mean_ds_cl".into(), report.mean_ds_cl);
    d.insert("exact_mean_Qcl".into(), report.mean_qcl);
    d.insert("exact_mean_Qq".into(), report.mean_qq);
    d.insert("D_rho_eta".into(), report.d_rho_eta);
    d.insert("D_eta_tau".into(), report.d_eta_tau);
    d.insert("D_rho_tau".into(), report.d_rho_tau);
    d.insert("D_env".into(), report.d_env);
    d.insert("max_split_defect".into(), report.max_split_defect);
    d.insert("tpm_ift_value".into(), ift.value);
    d.insert("tpm_lambda".into(), ift.lambda);
    d.insert("tpm_n_paths".into(), ift.n_paths as f64);
    s
}

fn fluorescence_protocol(config: &RunConfig) -> Result<FluorescenceProtocol, CliError> {
    let f = &config.fluorescence;
    let mut protocol = FluorescenceProtocol::new(config.dt, config.steps);
    protocol.flux_window = config.flux_window();
    protocol.initial = match f.initial.pure_or_thermal()? {
        Some(k) => InitialCondition::Ket(k),
        None => InitialCondition::Thermal,
    };
    protocol.final_distribution = f.final_distribution;
    protocol.record_trajectories = config.csv_trajectories;
    Ok(protocol)
}

fn fluorescence(config: &RunConfig) -> Result<(Vec<LedgerRow>, EnsembleSummary), CliError> {
    let p = &config.fluorescence.params;
    let protocol = fluorescence_protocol(config)?;
    Ok(match config.mode {
        Mode::Sample => {
            let out = run_fluorescence(p, &protocol, config.n_traj, config.seed.expect("validated"))?;
            (out.rows().cloned().collect(), out.summary)
        }
        Mode::Enumerate => (Vec::new(), enumerate_fluorescence(p, &protocol)?.summary),
        Mode::Master => (Vec::new(), fluorescence_master_summary(p, &protocol)?),
    })
}

fn monitor(config: &RunConfig) -> Result<(Vec<LedgerRow>, EnsembleSummary), CliError> {
    let p = config.monitor_params();
    let initial = config.monitor.initial.pure_or_thermal()?.expect("validated");
    let mut protocol = MonitorProtocol::new(config.steps, initial);
    protocol.record_trajectories = config.csv_trajectories;
    Ok(match config.mode {
        Mode::Sample => {
            let out = run_monitoring(&p, &protocol, config.n_traj, config.seed.expect("validated"))?;
            (out.rows().cloned().collect(), out.summary)
        }
        Mode::Master => (Vec::new(), monitor_master_summary(&p, &protocol)?),
        Mode::Enumerate => return Err(CliError::Config("monitor cannot be enumerated".into())),
    })
}
