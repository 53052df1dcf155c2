use std::io::Write;
use std::path::PathBuf;

use atdlab::analysis::{
    check_conditions, expected_iteration, modulus_eta_bound, preconditioner, rank_k_eigen_approx, rate_bound,
    selection_check, top_k_selection, valid_eta_bound, ConditionReport, EigenDecomposition, SelectionReport,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::commands::{Context, VERSION};
use crate::config::{analysis_system, AnalysisSpec, CliError, LoadedConfig, SelectionRule};

#[derive(Serialize)]
struct CurvePoint {
    step: usize,
    error: f64,
    bound: Option<f64>,
}

#[derive(Serialize)]
struct Verdict {
    k: usize,
    selection: Vec<usize>,
    alpha: f64,
    eta: f64,
    valid_eta_bound: f64,
    modulus_eta_bound: f64,
    conditions: ConditionReport,
    converges: bool,
    violations: Vec<String>,
    selection_check: SelectionReport,
    /// All negative eigenvalues selected, eta small enough for them, and the
    /// three conditions hold.
    off_policy_verdict: bool,
    final_error: f64,
    reached_tolerance_at: Option<usize>,
    bound_note: Option<String>,
    curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct AnalysisReport {
    name: String,
    fingerprint: String,
    version: String,
    dimension: usize,
    eigenvalues: Vec<[f64; 2]>,
    verdicts: Vec<Verdict>,
}

fn violations(r: &ConditionReport) -> Vec<String> {
    let mut out = Vec::new();
    if !r.spectral_ok {
        out.push(format!(
            "condition I: I - BA has an eigenvalue other than 1 with modulus {:.6} (needs < 1)",
            r.max_offending_modulus
        ));
    }
    if !r.rank_ok {
        out.push(format!(
            "condition II: rank(BA) = {} differs from rank((BA)^2) = {}",
            r.rank_ba, r.rank_ba_squared
        ));
    }
    if !r.nullspace_ok {
        out.push(format!(
            "condition III: null(BA) differs from null(A) (principal-angle sine {:.3e})",
            r.nullspace_residual
        ));
    }
    out
}

fn cover_negative_selection(dec: &EigenDecomposition, k: usize) -> Vec<usize> {
    let lambdas = dec.lambdas();
    let scale = lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut chosen = vec![false; lambdas.len()];
    let add = |i: usize, chosen: &mut Vec<bool>| {
        chosen[i] = true;
        if let Some(j) = dec.partner(i) {
            chosen[j] = true;
        }
    };
    for (i, z) in lambdas.iter().enumerate() {
        if z.re < -1e-10 * scale {
            add(i, &mut chosen);
        }
    }
    for i in 0..lambdas.len() {
        if chosen.iter().filter(|&&c| c).count() >= k {
            break;
        }
        add(i, &mut chosen);
    }
    (0..lambdas.len()).filter(|&i| chosen[i]).collect()
}

fn curve_steps(total: usize, points: usize) -> Vec<usize> {
    if total == 0 || points <= 1 {
        return vec![total];
    }
    let mut steps: Vec<usize> = (0..points)
        .map(|i| ((total as f64).powf(i as f64 / (points - 1) as f64)).round() as usize)
        .collect();
    steps.insert(0, 0);
    steps.dedup();
    steps
}

fn analyze_point(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    dec: &EigenDecomposition,
    spec: &AnalysisSpec,
    k: usize,
    selection: &[usize],
    alpha: f64,
    eta: f64,
    eta_bound: f64,
) -> Result<Verdict, CliError> {
    let approx = rank_k_eigen_approx(dec, selection)?;
    let conditions = check_conditions(a, &preconditioner(&approx, alpha, eta))?;
    let selection_check = selection_check(dec, selection, alpha, eta)?;
    let trace = expected_iteration(
        a,
        b,
        &approx.pinv,
        alpha,
        eta,
        &DVector::zeros(a.nrows()),
        spec.iterations,
        Some(spec.tolerance),
    )?;

    let mut bound_note = None;
    let bound_at = |t: usize| -> Result<f64, String> {
        let p = spec.picard_p.ok_or_else(|| "no picard_p configured".to_string())?;
        if spec.selection != SelectionRule::TopK {
            return Err("the rate bound assumes the top-k selection".into());
        }
        let t = u32::try_from(t).map_err(|_| "step too large for the bound".to_string())?;
        rate_bound(dec, selection.len(), alpha, eta, p, t).map_err(|e| e.to_string())
    };
    let last = trace.errors.len() - 1;
    let curve = curve_steps(last, spec.curve_points)
        .into_iter()
        .map(|step| {
            let bound = match bound_at(step) {
                Ok(v) => Some(v),
                Err(note) => {
                    bound_note.get_or_insert(note);
                    None
                }
            };
            CurvePoint {
                step,
                error: trace.errors[step],
                bound,
            }
        })
        .collect();

    let off_policy_verdict =
        selection_check.covers_negative && selection_check.eta_ok && selection_check.conditions.converges;
    Ok(Verdict {
        k,
        selection: selection.to_vec(),
        alpha,
        eta,
        valid_eta_bound: eta_bound,
        modulus_eta_bound: modulus_eta_bound(dec, alpha),
        converges: conditions.converges,
        violations: violations(&conditions),
        conditions,
        selection_check,
        off_policy_verdict,
        final_error: trace.final_error(),
        reached_tolerance_at: trace.stopped_at,
        bound_note,
        curve,
    })
}

/// Writes the per-(k, alpha, eta) verdict report as JSON.
pub fn analyze(loaded: &LoadedConfig, ctx: &Context) -> Result<PathBuf, CliError> {
    let config = &loaded.config;
    let spec = config
        .analysis
        .as_ref()
        .ok_or_else(|| CliError::Config("missing field `analysis`".into()))?;
    let (a, b) = analysis_system(&config.environment, &loaded.base_dir, spec)?;
    let dec = EigenDecomposition::new(&a)?;

    let mut verdicts = Vec::new();
    for &k in &spec.ranks {
        if k > a.nrows() {
            return Err(CliError::Config(format!("analysis rank {k} exceeds the dimension {}", a.nrows())));
        }
        let selection = match spec.selection {
            SelectionRule::TopK => top_k_selection(&dec, k),
            SelectionRule::CoverNegative => cover_negative_selection(&dec, k),
        };
        for &alpha in &spec.alphas {
            let bound = valid_eta_bound(&dec, &selection, alpha)?;
            let etas: Vec<f64> = match (&spec.etas, &spec.eta_fractions) {
                (Some(etas), _) => etas.clone(),
                (None, Some(fractions)) => fractions.iter().map(|f| f * bound).collect(),
                (None, None) => unreachable!("validated: one eta list is present"),
            };
            for eta in etas {
                let v = analyze_point(&a, &b, &dec, spec, k, &selection, alpha, eta, bound)?;
                println!(
                    "k={k} alpha={alpha} eta={eta:.4e}: converges={}{}, final error {:.3e}",
                    v.converges,
                    if v.violations.is_empty() {
                        String::new()
                    } else {
                        format!(" [{}]", v.violations.join("; "))
                    },
                    v.final_error
                );
                verdicts.push(v);
            }
        }
    }

    let report = AnalysisReport {
        name: config.name.clone(),
        fingerprint: config.fingerprint(ctx.seed_offset),
        version: VERSION.to_string(),
        dimension: a.nrows(),
        eigenvalues: dec.lambdas().iter().map(|z| [z.re, z.im]).collect(),
        verdicts,
    };
    let path = ctx.output_dir.join(format!("{}_analysis.json", config.name));
    std::fs::create_dir_all(&ctx.output_dir)?;
    let mut f = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(f)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}
