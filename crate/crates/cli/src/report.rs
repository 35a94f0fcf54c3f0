use std::fmt::Write as _;
use std::path::Path;

use anyhow::anyhow;
use serde_json::Value;

use crate::failure::Failure;
use crate::run::write_text;

fn read_json(path: &Path) -> Result<Option<Value>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::config(e).context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Failure::config(e).context(format!("parsing {}", path.display())))
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.6}"),
        None => "-".into(),
    }
}

fn pct(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{:.2}%", 100.0 * x),
        None => "-".into(),
    }
}

fn arr(v: &Value) -> &[Value] {
    v.as_array().map(Vec::as_slice).unwrap_or(&[])
}

fn render_inspect(s: &mut String, layers: &Value) {
    let _ = writeln!(s, "weight ranges");
    let _ = writeln!(s, "{:<16} {:>8} {:>12} {:>12} {:>12}", "layer", "channels", "min", "max", "range ratio");
    for l in arr(layers) {
        let ch = arr(&l["channels"]);
        let lo = ch.iter().filter_map(|c| c["min"].as_f64()).fold(f64::INFINITY, f64::min);
        let hi = ch.iter().filter_map(|c| c["max"].as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>12.6} {:>12.6} {:>12}",
            l["layer"].as_str().unwrap_or("?"),
            ch.len(),
            lo,
            hi,
            num(&l["range_ratio"])
        );
    }
}

fn render_equalization(s: &mut String, eq: &Value) {
    let _ = writeln!(
        s,
        "equalization: {} sweeps, converged {}, objective {} -> {}",
        eq["iterations"],
        eq["converged"],
        num(&eq["objective_before"]),
        num(&eq["objective_after"])
    );
    let _ = writeln!(s, "{:<16} {:<16} {:>6} {:>12} {:>12}", "first", "second", "iters", "before", "after");
    for p in arr(&eq["pairs"]) {
        let _ = writeln!(
            s,
            "{:<16} {:<16} {:>6} {:>12} {:>12}",
            p["first"].as_str().unwrap_or("?"),
            p["second"].as_str().unwrap_or("?"),
            p["iterations"],
            num(&p["objective_before"]),
            num(&p["objective_after"])
        );
    }
}

fn render_bias(s: &mut String, b: &Value) {
    let before = arr(&b["measured_before"]);
    let after = arr(&b["measured_after"]);
    if before.is_empty() {
        let n = arr(&b["correction"]["corrected"]).len();
        let _ = writeln!(s, "bias correction: {n} layers corrected (no dataset for measurement)");
        return;
    }
    let _ = writeln!(s, "biased error (mean |per-channel| over the dataset)");
    let _ = writeln!(s, "{:<16} {:>14} {:>14}", "layer", "before", "after");
    for (x, y) in before.iter().zip(after) {
        let _ = writeln!(
            s,
            "{:<16} {:>14} {:>14}",
            x["layer"].as_str().unwrap_or("?"),
            num(&x["mean_abs"]),
            num(&y["mean_abs"])
        );
    }
}

fn render_eval(s: &mut String, e: &Value) {
    let q = &e["quantized"];
    let _ = writeln!(
        s,
        "accuracy: fp32 {}, quantized {} ({} samples, output mse {})",
        pct(&e["fp32"]["accuracy"]),
        pct(&q["accuracy"]),
        e["fp32"]["samples"],
        num(&q["mse"])
    );
    let _ = writeln!(s, "{:<16} {:>10}", "layer", "sqnr dB");
    for l in arr(&q["layers"]) {
        let _ = writeln!(s, "{:<16} {:>10}", l["layer"].as_str().unwrap_or("?"), num(&l["sqnr_db"]));
    }
}

fn render_sweep(s: &mut String, sw: &Value) {
    let _ = writeln!(s, "bitwidth sweep");
    let _ = writeln!(s, "{:>5} {:>10} {:>14}", "bits", "accuracy", "mse");
    for p in arr(sw) {
        let _ = writeln!(s, "{:>5} {:>10} {:>14}", p["bits"], pct(&p["accuracy"]), num(&p["mse"]));
    }
}

pub fn render_dir(dir: &Path) -> Result<String, Failure> {
    let mut s = String::new();
    if let Some(p) = read_json(&dir.join("pipeline.json"))? {
        let steps: Vec<&str> = arr(&p["steps"]).iter().filter_map(Value::as_str).collect();
        let _ = writeln!(s, "steps: {}\n", if steps.is_empty() { "(none)".into() } else { steps.join(", ") });
    } else {
        return Err(Failure::config(anyhow!("{} has no pipeline.json", dir.display())));
    }
    let sections: [(&str, fn(&mut String, &Value)); 4] = [
        ("equalization.json", render_equalization),
        ("bias_error.json", render_bias),
        ("eval.json", render_eval),
        ("sweep.json", render_sweep),
    ];
    for (file, render) in sections {
        if let Some(v) = read_json(&dir.join(file))? {
            render(&mut s, &v);
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn report(input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let text = if input.is_dir() {
        render_dir(input)?
    } else {
        let v = read_json(input)?.ok_or_else(|| Failure::config(anyhow!("{} not found", input.display())))?;
        let mut s = String::new();
        render_inspect(&mut s, &v);
        s
    };
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
