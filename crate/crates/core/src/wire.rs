//! JSON shape of a read signal, shared by the HTTP service and the CLI.

use serde::{Deserialize, Serialize};

use crate::catalog::{DataSignal, GenericSignal};
use crate::signal_api::Signal;

/// Largest value count returned inline by the service.
pub const INLINE_LIMIT: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSignal {
    pub str_id: String,
    pub generic: GenericSignal,
    pub data_signal: DataSignal,
    pub units: String,
    pub shape: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Vec<f64>>,
    /// Where to fetch the values when they are not inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_url: Option<String>,
    #[serde(default)]
    pub axes: Vec<WireSignal>,
}

fn inlinable(v: &[f64], limit: Option<usize>) -> bool {
    limit.is_none_or(|l| v.len() <= l) && v.iter().all(|x| x.is_finite())
}

impl WireSignal {
    /// Values and time go inline when there are at most `limit` of them and
    /// all are finite; otherwise `data_url(str_id)` is given instead.
    /// `limit = None` always inlines.
    pub fn from_signal(
        sig: &Signal,
        limit: Option<usize>,
        data_url: &dyn Fn(&str) -> String,
    ) -> WireSignal {
        let str_id = sig.str_id();
        let inline = inlinable(&sig.values, limit)
            && sig.time.as_deref().is_none_or(|t| inlinable(t, limit));
        WireSignal {
            generic: sig.generic.clone(),
            data_signal: sig.meta.clone(),
            units: sig.units.as_str().to_string(),
            shape: sig.shape.clone(),
            values: inline.then(|| sig.values.clone()),
            time: if inline { sig.time.clone() } else { None },
            data_url: (!inline).then(|| data_url(&str_id)),
            axes: sig
                .axes
                .iter()
                .map(|a| WireSignal::from_signal(a, limit, data_url))
                .collect(),
            str_id,
        }
    }
}
