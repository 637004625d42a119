use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: Vec<f64>,
    /// Ground truth for reporting; the aggregator never reads it.
    pub is_malicious: bool,
}

/// Coordinate-wise median; with an even number of updates the two middle
/// values are averaged.
pub fn median_aggregate(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::rejected("median of zero updates"))?;
    let dim = first.params.len();
    if let Some(u) = updates.iter().find(|u| u.params.len() != dim) {
        return Err(Error::rejected(format!(
            "update from client {} has {} parameters, expected {dim}",
            u.client_id,
            u.params.len()
        )));
    }
    if updates.iter().any(|u| u.params.iter().any(|v| v.is_nan())) {
        return Err(Error::rejected("update contains NaN"));
    }
    let n = updates.len();
    let mut column = vec![0.0; n];
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.params[j];
        }
        column.sort_unstable_by(f64::total_cmp);
        let m = if n % 2 == 1 {
            column[n / 2]
        } else {
            let (a, b) = (column[n / 2 - 1], column[n / 2]);
            a + (b - a) / 2.0
        };
        out.push(m);
    }
    Ok(out)
}
