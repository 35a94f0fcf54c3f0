use serde::{Deserialize, Serialize};

use super::scaling::{apply_pair_scaling, equalization_scale, pair_objective, pair_ranges};
use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::quant::ChannelRanges;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualizeOptions {
    /// Convergence threshold on `max_i |ln s_i|` over a full sweep.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EqualizeOptions {
    fn default() -> Self {
        EqualizeOptions {
            tol: 1e-4,
            max_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub first: String,
    pub activation: String,
    pub second: String,
    pub before: [ChannelRanges; 2],
    pub after: [ChannelRanges; 2],
    /// Sweeps in which this pair still moved by at least `tol`.
    pub iterations: usize,
    /// `max_i |ln s_i|` of the last scale applied to this pair.
    pub final_max_abs_log_scale: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualizationReport {
    pub pairs: Vec<PairReport>,
    /// Sweeps that changed the graph by at least `tol`; the final sweep that
    /// only confirms convergence is not counted.
    pub iterations: usize,
    pub converged: bool,
    /// Sum of the per-pair precision objectives.
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Equalize every eligible pair, sweeping the pairs in topological order
/// until a whole sweep moves no scale by more than `tol` (in log space) or
/// `max_iters` sweeps have changed the graph. Non-convergence is reported
/// through `converged = false`, not as an error.
pub fn equalize_graph<T: Scalar>(
    mut graph: LayerGraph<T>,
    opts: EqualizeOptions,
) -> Result<(LayerGraph<T>, EqualizationReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    let pairs = graph.find_equalizable_pairs()?;
    let before = pairs
        .iter()
        .map(|&p| pair_ranges(&graph, p))
        .collect::<Result<Vec<_>>>()?;
    let mut iters = vec![0usize; pairs.len()];
    let mut last_log = vec![0.0f64; pairs.len()];
    let mut sweeps = 0;
    let mut converged = pairs.is_empty();
    while !converged {
        let mut moved = 0.0f64;
        for (k, &pair) in pairs.iter().enumerate() {
            let (r1, r2) = pair_ranges(&graph, pair)?;
            let s = equalization_scale(&r1, &r2)?;
            let m = s.max_abs_log();
            last_log[k] = m;
            if m >= opts.tol {
                iters[k] += 1;
            }
            moved = moved.max(m);
            graph = apply_pair_scaling(graph, pair, &s)?;
        }
        if moved < opts.tol {
            converged = true;
        } else {
            sweeps += 1;
            if sweeps >= opts.max_iters {
                break;
            }
        }
    }
    if !converged {
        // one more measurement to know whether the last sweep finished the job
        let still = pairs.iter().try_fold(0.0f64, |m, &p| {
            let (r1, r2) = pair_ranges(&graph, p)?;
            Ok::<_, Error>(m.max(equalization_scale(&r1, &r2)?.max_abs_log()))
        })?;
        converged = still < opts.tol;
        if !converged {
            log::warn!(
                "equalization stopped after {sweeps} sweeps with max |ln s| = {still:.3e} (tolerance {:.1e})",
                opts.tol
            );
        }
    }

    let mut reports = Vec::with_capacity(pairs.len());
    for (k, (&pair, (b1, b2))) in pairs.iter().zip(before).enumerate() {
        let (a1, a2) = pair_ranges(&graph, pair)?;
        reports.push(PairReport {
            first: graph.layer(pair.first).name.clone(),
            activation: graph.layer(pair.activation).name.clone(),
            second: graph.layer(pair.second).name.clone(),
            objective_before: pair_objective(&b1, &b2),
            objective_after: pair_objective(&a1, &a2),
            before: [b1, b2],
            after: [a1, a2],
            iterations: iters[k],
            final_max_abs_log_scale: last_log[k],
        });
    }
    let report = EqualizationReport {
        iterations: sweeps,
        converged,
        objective_before: reports.iter().map(|p| p.objective_before).sum(),
        objective_after: reports.iter().map(|p| p.objective_after).sum(),
        pairs: reports,
    };
    Ok((graph, report))
}
