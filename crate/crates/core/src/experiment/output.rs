use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coevolve::{CoevolutionRow, CurveRow};
use crate::error::{Error, Result};
use crate::evalbench::{ResultRow, SensitivityRow};
use crate::explain::FeatureSummary;
use crate::simenv::EventLogRow;

/// A record type with a fixed column order.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

/// Write `rows` under the type's header; an empty table still gets its header.
pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// A non-dominated member and its objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub policy: String,
    pub u_mean: f64,
    pub d_mean: Option<f64>,
    pub b_mean: f64,
}

impl CsvRow for CurveRow {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "policy_id",
        "mean_shaped_total_reward",
        "policy_loss",
        "value_loss",
        "entropy",
        "clip_fraction",
        "mean_shaped_reward_per_decision",
    ];
}

impl CsvRow for CoevolutionRow {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "p",
        "q_star",
        "kl",
        "tau",
        "transferred",
        "return_p",
        "return_qstar",
    ];
}

impl CsvRow for ResultRow {
    const HEADER: &'static [&'static str] = &[
        "policy",
        "booking_request_mean",
        "booking_request_sd",
        "scheduled_mean",
        "scheduled_sd",
        "shows_mean",
        "shows_sd",
        "noshows_mean",
        "noshows_sd",
        "u_mean",
        "u_sd",
        "d_mean",
        "d_sd",
        "b_mean",
        "b_sd",
        "r_slotmean",
        "r_slotmean_sd",
        "r_total_mean",
    ];
}

impl CsvRow for SensitivityRow {
    const HEADER: &'static [&'static str] = &["policy", "delta", "r_slotmean", "rel_change"];
}

impl CsvRow for ParetoRow {
    const HEADER: &'static [&'static str] = &["policy", "u_mean", "d_mean", "b_mean"];
}

impl CsvRow for FeatureSummary {
    const HEADER: &'static [&'static str] = &[
        "action",
        "feature_name",
        "mean_phi",
        "mean_abs_phi",
        "value_phi_corr_sign",
    ];
}

impl CsvRow for EventLogRow {
    const HEADER: &'static [&'static str] = &[
        "day",
        "seq",
        "event_kind",
        "patient_id",
        "physician_id",
        "slot_day",
        "slot_index",
        "action",
        "pi",
        "shaped_u",
        "shaped_d",
        "shaped_b",
        "realized_S",
        "realized_u",
        "realized_d",
        "realized_b",
    ];
}
