use std::path::Path;

use qtherm::scenarios::LedgerRow;
use qtherm::thermo::EnsembleSummary;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const CSV_NAME: &str = "trajectories.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub config_sha256: String,
    pub trajectories_csv_sha256: String,
    pub summary_json_sha256: String,
}

/// Output files of one run, held in memory until written.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub csv: Vec<u8>,
    pub summary: String,
    pub manifest: String,
    pub summary_data: EnsembleSummary,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub(crate) fn csv_bytes(rows: &[LedgerRow], dim: usize) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["traj_id".to_string(), "k".into(), "t".into(), "outcome".into()];
    header.extend((0..dim).map(|i| format!("re_amp_{i}")));
    header.extend((0..dim).map(|i| format!("im_amp_{i}")));
    header.extend(["dW", "dQcl", "dQq", "dis_step", "y"].map(String::from));
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![r.traj_id.to_string(), r.k.to_string(), r.t.to_string(), r.outcome.clone()];
        rec.extend(r.amps.iter().map(|a| a.re.to_string()));
        rec.extend(r.amps.iter().map(|a| a.im.to_string()));
        rec.extend([r.dw, r.dqcl, r.dqq, r.dis].map(|x| x.to_string()));
        rec.push(r.y.map(|y| y.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

fn json(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    s.push('\n');
    Ok(s)
}

impl Artifacts {
    pub(crate) fn new(config: &RunConfig, csv: Vec<u8>, summary: EnsembleSummary) -> Result<Self, CliError> {
        let summary_text = json(&summary)?;
        let config_text = serde_json::to_string(config).map_err(|e| CliError::Io(e.into()))?;
        let manifest = Manifest {
            tool: "qtherm",
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            trajectories_csv_sha256: sha256_hex(&csv),
            summary_json_sha256: sha256_hex(summary_text.as_bytes()),
        };
        Ok(Self {
            manifest: json(&manifest)?,
            csv,
            summary: summary_text,
            summary_data: summary,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CSV_NAME), &self.csv)?;
        std::fs::write(dir.join(SUMMARY_NAME), &self.summary)?;
        std::fs::write(dir.join(MANIFEST_NAME), &self.manifest)?;
        Ok(())
    }
}
