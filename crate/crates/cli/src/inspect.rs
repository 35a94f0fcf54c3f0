use std::fmt::Write as _;
use std::path::Path;

use dfq::graph::load_model;
use dfq::quant::{fold_batch_norm, weight_summary, LayerWeightSummary};

use crate::failure::Failure;
use crate::run::write_text;

pub const CSV_HEADER: &str = "layer,channel,min,q1,median,q3";

/// One row per output channel; the maximum lives in the JSON report.
pub fn to_csv(layers: &[LayerWeightSummary]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for l in layers {
        for c in &l.channels {
            let _ = writeln!(s, "{},{},{},{},{},{}", l.layer, c.channel, c.min, c.q1, c.median, c.q3);
        }
    }
    s
}

pub fn inspect(model: &Path, out: Option<&Path>, csv: Option<&Path>, fold_bn: bool) -> Result<(), Failure> {
    let mut graph = load_model(model).map_err(|e| Failure::model(e).context(format!("loading {}", model.display())))?;
    if fold_bn {
        graph = fold_batch_norm(graph)?;
    }
    let summary = weight_summary(&graph)?;
    let json = serde_json::to_string_pretty(&summary).map_err(Failure::model)? + "\n";
    match out {
        Some(p) => write_text(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = csv {
        write_text(p, &to_csv(&summary))?;
    }
    Ok(())
}
