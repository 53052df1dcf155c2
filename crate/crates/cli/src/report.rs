use std::collections::BTreeMap;
use std::path::Path;

use crate::config::CliError;

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn field<'a>(record: &'a csv::StringRecord, headers: &csv::StringRecord, name: &str) -> Result<&'a str, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .and_then(|i| record.get(i))
        .ok_or_else(|| CliError::Runtime(format!("missing column `{name}`")))
}

fn number(text: &str) -> Result<f64, CliError> {
    text.parse().map_err(|_| CliError::Runtime(format!("`{text}` is not a number")))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-algorithm table from a curves CSV: error at the last step and the
/// mean over time, both averaged over seeds.
fn curves_table(path: &Path) -> Result<String, CliError> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| CliError::Runtime(e.to_string()))?.clone();
    // algo -> seed -> [(step, error)]
    let mut data: BTreeMap<String, BTreeMap<u64, Vec<(u64, f64)>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let algo = field(&record, &headers, "algo")?.to_string();
        let seed = number(field(&record, &headers, "seed")?)? as u64;
        let step = number(field(&record, &headers, "step")?)? as u64;
        let error = number(field(&record, &headers, "error")?)?;
        data.entry(algo).or_default().entry(seed).or_default().push((step, error));
    }
    let mut out = format!("{}\n| algo | runs | final error % | mean over time % |\n|---|---|---|---|\n", path.display());
    for (algo, runs) in &data {
        let finals: Vec<f64> = runs
            .values()
            .map(|c| c.iter().max_by_key(|p| p.0).map_or(f64::NAN, |p| p.1))
            .collect();
        let means: Vec<f64> = runs
            .values()
            .map(|c| c.iter().map(|p| p.1).sum::<f64>() / c.len() as f64)
            .collect();
        let (fm, fse) = mean_se(&finals);
        let (mm, mse) = mean_se(&means);
        out.push_str(&format!(
            "| {algo} | {} | {:.3} +- {:.3} | {:.3} +- {:.3} |\n",
            runs.len(),
            100.0 * fm,
            100.0 * fse,
            100.0 * mm,
            100.0 * mse
        ));
    }
    Ok(out)
}

/// Per-algorithm best setting and max/min ratio from a sensitivity CSV.
fn sensitivity_table(path: &Path) -> Result<String, CliError> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| CliError::Runtime(e.to_string()))?.clone();
    let mut data: BTreeMap<String, Vec<(String, f64, f64, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        data.entry(field(&record, &headers, "algo")?.to_string()).or_default().push((
            field(&record, &headers, "param_name")?.to_string(),
            number(field(&record, &headers, "param_value")?)?,
            number(field(&record, &headers, "lambda")?)?,
            number(field(&record, &headers, "mean_error")?)?,
        ));
    }
    let mut out = format!(
        "{}\n| algo | settings | best param | lambda | best mean error % | max/min |\n|---|---|---|---|---|---|\n",
        path.display()
    );
    for (algo, rows) in &data {
        let best = rows.iter().min_by(|a, b| a.3.total_cmp(&b.3)).expect("nonempty group");
        let worst = rows.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "| {algo} | {} | {} = {} | {} | {:.3} | {:.2} |\n",
            rows.len(),
            best.0,
            best.1,
            best.2,
            100.0 * best.3,
            worst / best.3
        ));
    }
    Ok(out)
}

/// Summarizes curves and sensitivity CSVs as markdown tables.
pub fn report(paths: &[std::path::PathBuf]) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("`report` needs at least one CSV file".into()));
    }
    let mut out = String::new();
    for path in paths {
        let mut reader = open(path)?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
            .clone();
        let table = if headers.iter().any(|h| h == "step") {
            curves_table(path)?
        } else if headers.iter().any(|h| h == "mean_error") {
            sensitivity_table(path)?
        } else {
            return Err(CliError::Runtime(format!("{}: not a curves or sensitivity CSV", path.display())));
        };
        out.push_str(&table);
        out.push('\n');
    }
    Ok(out)
}
