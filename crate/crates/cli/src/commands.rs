use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use llmimage::algebra::{clr, ProbVector};
use llmimage::extraction::{estimate_cost, CostParams, Extractor, Strategy};
use llmimage::image::{
    attribute, collect_image, compare_images, detect_logit_change, estimate_embedding_size, fast_extract,
    read_image, write_image, AttributionThresholds, CollectOptions, FastExtractOptions, ModelImage, PivotMode,
    UpdateReport,
};
use llmimage::io::{read_matrix_csv, read_vector_csv, write_atomic, write_spectrum_csv, write_vector_csv};
use llmimage::mock::MockApi;
use llmimage::{Error, Result};
use llmimage_transport::{serve, ServerOptions};
use serde_json::{json, Value};

use crate::args::*;
use crate::backend::{in_file, mock_model, read_text, strategy, Backend};
use crate::manifest::{default_path, Recorder};
use crate::Failure;

type Outcome = std::result::Result<(), Failure>;

fn line(out: &mut dyn Write, value: &Value) -> Result<()> {
    writeln!(out, "{value}")?;
    Ok(())
}

fn load_image(path: &Path) -> Result<ModelImage> {
    read_image(path).map_err(|e| in_file(e, path))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn manifest_for(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| default_path(out))
}

pub fn mock_serve(a: &MockServeArgs, out: &mut dyn Write) -> Outcome {
    let model = Arc::new(mock_model(a.config.as_deref(), a.seed, a.update.as_deref())?);
    let auth_token = match &a.auth_env {
        Some(var) => Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?),
        None => None,
    };
    let caps = model.capabilities();
    let server = serve(
        Arc::new(MockApi::new(model.clone())),
        &a.bind,
        ServerOptions {
            rate_limit: a.rate_limit,
            auth_token,
            inject_failures: a.inject_failures,
            worker_threads: None,
        },
    )?;
    line(
        out,
        &json!({"url": server.url(), "model_id": model.model_id(), "capabilities": caps}),
    )?;
    out.flush().map_err(Error::from)?;
    server.wait()?;
    Ok(())
}

fn extraction_hint(s: StrategyArg, e: &Error) -> Option<String> {
    match (s, e) {
        (StrategyArg::Fast, Error::NumericalInstability(_) | Error::BiasedSetMismatch { .. }) => Some(
            "the fast strategy cannot handle this logit spread; rerun with --strategy stable".into(),
        ),
        (_, Error::ReferenceTokensShifted { .. } | Error::TopTokenDisplaced { .. }) => Some(
            "responses vary between calls; if the endpoint is stochastic use --strategy stochastic".into(),
        ),
        (StrategyArg::Stochastic, Error::BudgetExhausted { .. }) => {
            Some("raise --budget or pass --n-hint with the replica count".into())
        }
        _ => None,
    }
}

pub fn extract(a: &ExtractArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("extract", a);
    let backend = Backend::open(&a.api)?;
    let ex = Extractor::new(&backend.session, backend.extract_options(a.beta, a.budget))?;
    let hint = |e: Error| {
        let h = extraction_hint(a.strategy, &e);
        Failure { error: e, hint: h }
    };
    let (probs, result) = match strategy(a.strategy, Some(a.epsilon), a.n_hint) {
        Strategy::Stochastic { n_hint } => {
            let o = ex.extract_stochastic(&a.context, n_hint).map_err(hint)?;
            if o.degenerate {
                tracing::warn!("only one replica observed; the endpoint may be deterministic");
            }
            let r = json!({
                "fingerprint": o.fingerprint,
                "degenerate": o.degenerate,
                "reference_tokens": o.reference_tokens,
                "partials": o.partials.len(),
            });
            (o.probs, r)
        }
        Strategy::LogprobFree { epsilon } => {
            let o = ex.extract_logprob_free(&a.context, epsilon).map_err(hint)?;
            let r = json!({"top_token": o.top_token, "unargmaxable": o.unargmaxable});
            (o.probs, r)
        }
        s => (ex.extract(s, &a.context).map_err(hint)?, Value::Null),
    };
    write_vector_csv(&a.out, probs.as_slice())?;
    rec.output(&a.out);
    let m = rec.finish(&manifest_for(&a.manifest, &a.out), Some(&backend), result)?;
    line(out, &json!({"out": a.out, "call_count": m.call_count, "result": m.result}))?;
    Ok(())
}

pub fn collect(a: &CollectArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("image collect", a);
    let prompts = a.prompts.as_deref().map(read_lines).transpose()?;
    let backend = Backend::open(&a.api)?;
    let ex = Extractor::new(&backend.session, backend.extract_options(None, None))?;
    let image = collect_image(
        &ex,
        &CollectOptions {
            strategy: strategy(a.strategy, None, None),
            margin: a.margin,
            batch: a.batch,
            extra_columns: a.extra,
            tolerance: a.tolerance,
            prompts,
            max_columns: a.max_columns,
            source_id: a.source_id.clone(),
            created_at: a.created_at.clone(),
        },
    )
    .map_err(|e| {
        let hint = matches!(e, Error::VocabExhausted { .. })
            .then(|| "supply more prompts with --prompts or lower --margin".to_string());
        Failure { error: e, hint }
    })?;
    write_image(&a.out, &image)?;
    rec.output(&a.out);
    let est = image.embedding_size();
    let result = json!({
        "columns": image.columns(),
        "d_estimate": image.d_estimate(),
        "log_gap_index": est.log_gap_index,
        "plateau": est.plateau,
    });
    rec.finish(&manifest_for(&a.manifest, &a.out), Some(&backend), result.clone())?;
    line(out, &result)?;
    Ok(())
}

pub fn embed_size(a: &EmbedSizeArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("image embed-size", a);
    let matrix = match (&a.image, &a.matrix) {
        (Some(p), _) => load_image(p)?.matrix().clone(),
        (None, Some(p)) => read_matrix_csv(p).map_err(|e| in_file(e, p))?,
        (None, None) => return Err(Error::Config("pass --image or --matrix".into()).into()),
    };
    let est = estimate_embedding_size(matrix.as_ref(), a.tolerance)?;
    if let Some(p) = &a.spectrum_out {
        write_spectrum_csv(p, &est.spectrum)?;
        rec.output(p);
    }
    let result = json!({
        "d": est.d,
        "log_gap_index": est.log_gap_index,
        "plateau": est.plateau,
        "columns": matrix.ncols(),
        "drop_ratio": est.spectrum.drop_ratio_after(est.d),
    });
    if let Some(m) = a.manifest.clone().or_else(|| a.spectrum_out.as_deref().map(default_path)) {
        rec.finish(&m, None, result.clone())?;
    }
    line(out, &result)?;
    Ok(())
}

pub fn spectrum(a: &SpectrumArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("image spectrum", a);
    let image = load_image(&a.image)?;
    write_spectrum_csv(&a.out, image.spectrum())?;
    rec.output(&a.out);
    let result = json!({"values": image.spectrum().values.len(), "d_estimate": image.d_estimate()});
    rec.finish(&manifest_for(&a.manifest, &a.out), None, result.clone())?;
    line(out, &result)?;
    Ok(())
}

pub fn fast(a: &FastExtractArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("image fast-extract", a);
    let image = load_image(&a.image)?;
    let backend = Backend::open(&a.api)?;
    let ex = Extractor::new(&backend.session, backend.extract_options(None, None))?;
    let opts = FastExtractOptions {
        pivots: match a.pivots {
            PivotArg::Qr => PivotMode::Qr,
            PivotArg::Leading => PivotMode::Leading,
        },
        tolerance: a.tolerance,
    };
    let o = fast_extract(&image, &ex, &a.context, &opts).map_err(|e| {
        let hint = matches!(e, Error::OutOfImage { .. })
            .then(|| "the API no longer matches this image; re-collect it or use extract --strategy stable".into());
        Failure { error: e, hint }
    })?;
    write_vector_csv(&a.out, o.probs.as_slice())?;
    rec.output(&a.out);
    let result = json!({
        "reference": o.reference,
        "pivots": o.pivots.len(),
        "discrepancy": o.discrepancy,
    });
    let m = rec.finish(&manifest_for(&a.manifest, &a.out), Some(&backend), result)?;
    line(out, &json!({"out": a.out, "call_count": m.call_count, "result": m.result}))?;
    Ok(())
}

pub fn audit(a: &AuditArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("audit", a);
    let first = load_image(&a.image_a)?;
    let second = load_image(&a.image_b)?;
    let probes = a.probe_contexts.as_deref().map(read_lines).transpose()?;
    let change = compare_images(&first, &second)?;
    let logit_change = detect_logit_change(&first, &second, probes.as_deref(), a.tolerance)?;
    let report = UpdateReport::new(logit_change, change, first.d_estimate());
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(p) = &a.out {
        write_atomic(p, format!("{text}\n").as_bytes())?;
        rec.output(p);
    }
    if let Some(m) = a.manifest.clone().or_else(|| a.out.as_deref().map(default_path)) {
        rec.finish(&m, None, serde_json::to_value(&report).map_err(Error::from)?)?;
    }
    writeln!(out, "{text}").map_err(Error::from)?;
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| in_file(e.into(), dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "llmimg"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no .llmimg files", dir.display())));
    }
    Ok(files)
}

pub fn attribute_cmd(a: &AttributeArgs, out: &mut dyn Write) -> Outcome {
    let mut rec = Recorder::new("attribute", a);
    let files = image_files(&a.images)?;
    let images = files.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let probs = read_vector_csv(&a.output).map_err(|e| in_file(e, &a.output))?;
    let target = clr(&ProbVector::new(probs).map_err(|e| in_file(e, &a.output))?)?;
    let refs: Vec<&ModelImage> = images.iter().collect();
    let th = AttributionThresholds {
        relative_residual: a.max_relative_residual,
        margin: a.min_margin,
    };
    let report = attribute(&refs, &target, &th)?;

    let file_of = |id: &str| {
        images
            .iter()
            .zip(&files)
            .find(|(img, _)| img.source_id() == id)
            .map(|(_, f)| f.display().to_string())
            .unwrap_or_default()
    };
    let mut table = format!("{:<24} {:>14} {:>14}  file\n", "source_id", "residual", "relative");
    for e in &report.entries {
        let _ = writeln!(
            table,
            "{:<24} {:>14.6e} {:>14.6e}  {}",
            e.source_id,
            e.residual,
            e.relative_residual,
            file_of(&e.source_id)
        );
    }
    let _ = writeln!(
        table,
        "best match: {}  (margin {:.3e})",
        report.best_match.as_deref().unwrap_or("none"),
        report.margin
    );
    if let Some(p) = &a.out {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        write_atomic(p, format!("{text}\n").as_bytes())?;
        rec.output(p);
    }
    if let Some(m) = a.manifest.clone().or_else(|| a.out.as_deref().map(default_path)) {
        rec.finish(&m, None, serde_json::to_value(&report).map_err(Error::from)?)?;
    }
    write!(out, "{table}").map_err(Error::from)?;
    Ok(())
}

pub fn cost(a: &CostArgs, out: &mut dyn Write) -> Outcome {
    let rec = Recorder::new("cost", a);
    let params = CostParams {
        v: a.v,
        k: a.k,
        d: a.d,
        n: a.n,
        beta_max: a.beta_max,
        epsilon: a.epsilon,
        price_per_call: a.price_per_call,
    };
    let positive = [a.v, a.d, a.n, a.beta_max, a.epsilon, a.price_per_call];
    if positive.iter().any(|x| !(*x > 0.0) || !x.is_finite()) || !(a.k >= 3.0) || a.epsilon >= a.beta_max {
        return Err(Error::Config("cost parameters must be positive, with k >= 3 and epsilon < beta_max".into()).into());
    }
    let rows = estimate_cost(&params);
    let text = match a.format {
        FormatArg::Json => format!("{}\n", serde_json::to_string_pretty(&rows).map_err(Error::from)?),
        FormatArg::Csv => rows.iter().fold(
            String::from("strategy,complexity,calls_per_output,image_price_usd\n"),
            |mut s, r| {
                let price = r.image_price_usd.map(|p| p.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{}", r.strategy, r.complexity, r.calls_per_output, price);
                s
            },
        ),
        FormatArg::Table => rows.iter().fold(
            format!("{:<14} {:<26} {:>14} {:>18}\n", "strategy", "complexity", "calls/output", "image price (USD)"),
            |mut s, r| {
                let price = r.image_price_usd.map_or("-".to_string(), |p| format!("{p:.2}"));
                let _ = writeln!(s, "{:<14} {:<26} {:>14.0} {:>18}", r.strategy, r.complexity, r.calls_per_output, price);
                s
            },
        ),
    };
    if let Some(m) = &a.manifest {
        rec.finish(m, None, serde_json::to_value(&rows).map_err(Error::from)?)?;
    }
    write!(out, "{text}").map_err(Error::from)?;
    Ok(())
}
