//! JSON reports and CSV loss logs.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::LossRecord;

/// Wrapper that makes every emitted report carry the config and seed used.
#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub result: T,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn loss_csv(records: &[LossRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_csv(records)?).map_err(|e| Error::io(path, e))
}
