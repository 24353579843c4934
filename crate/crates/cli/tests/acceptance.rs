//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Criteria 2 to 9 run in-process; criterion 10
//! reruns them through the HTTP server and client, with the cache on and
//! off, and compares every result file digest.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use faer::Mat;
use llmimage::algebra::{alr, alr_inverse, clr, softmax, ClrVector, LogitVector, ProbVector};
use llmimage::extraction::{fingerprint, ExtractOptions, Extractor};
use llmimage::image::{
    attribute, collect_image, collect_outputs, compare_images, detect_logit_change, estimate_embedding_size,
    fast_extract, unique_prompt, AttributionThresholds, Classification, CollectOptions, FastExtractOptions,
    ImageChange, ModelImage, UpdateReport,
};
use llmimage::io::{sha256_hex, spectrum_csv, vector_csv};
use llmimage::mock::rng::SplitMix64;
use llmimage::mock::{api_query, make_checkpoint_family, Embedding, MockApi, MockModel, MockModelSpec, UpdateKind};
use llmimage::{ApiSession, BiasSpec, Result};
use llmimage_cli::{run, Cli};
use llmimage_transport::{serve, ClientOptions, HttpApi, ServerHandle, ServerOptions};

const STAMP: &str = "2026-01-01T00:00:00Z";

#[derive(Clone, Copy, Debug, PartialEq)]
enum Route {
    InProcess,
    Http { cache: bool },
}

impl Route {
    fn name(self) -> &'static str {
        match self {
            Route::InProcess => "in-process",
            Route::Http { cache: true } => "http+cache",
            Route::Http { cache: false } => "http",
        }
    }

    fn connect(self, model: &Arc<MockModel>) -> Result<Conn> {
        let api = Arc::new(MockApi::new(model.clone()));
        match self {
            Route::InProcess => Ok(Conn {
                session: ApiSession::new(api, true)?,
                _server: None,
            }),
            Route::Http { cache } => {
                let server = serve(api, "127.0.0.1:0", ServerOptions::default())?;
                let client = HttpApi::connect(&server.url(), ClientOptions::default())?;
                Ok(Conn {
                    session: ApiSession::new(Arc::new(client), cache)?,
                    _server: Some(server),
                })
            }
        }
    }
}

/// A session and, over HTTP, the server behind it (dropped after it).
struct Conn {
    session: ApiSession,
    _server: Option<ServerHandle>,
}

impl Conn {
    fn extractor(&self) -> Result<Extractor<'_>> {
        Extractor::new(&self.session, ExtractOptions::default())
    }
}

#[derive(Default)]
struct Outcome {
    failures: Vec<String>,
    notes: Vec<String>,
    /// Result-file digests, compared across routes.
    artifacts: BTreeMap<String, String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn artifact(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.artifacts.insert(name.into(), sha256_hex(bytes));
    }

    fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn summary(&self) -> String {
        if self.passed() {
            self.notes.join("; ")
        } else {
            self.failures.join("; ")
        }
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn spec(v: usize, d: usize, seed: u64) -> MockModelSpec {
    MockModelSpec {
        v,
        d,
        seed,
        ..MockModelSpec::default()
    }
}

fn model(s: MockModelSpec) -> Result<Arc<MockModel>> {
    Ok(Arc::new(MockModel::new(s)?))
}

fn collect(conn: &Conn, margin: usize, source: &str) -> Result<ModelImage> {
    collect_image(
        &conn.extractor()?,
        &CollectOptions {
            margin,
            source_id: source.into(),
            created_at: Some(STAMP.into()),
            ..CollectOptions::default()
        },
    )
}

fn guarded(f: impl FnOnce(&mut Outcome) -> Result<()>) -> Outcome {
    let mut out = Outcome::default();
    if let Err(e) = f(&mut out) {
        out.failures.push(format!("error: {e}"));
    }
    out
}

// 1. Cost table.
fn cost_table() -> Outcome {
    guarded(|o| {
        let t = Instant::now();
        let cli = Cli::try_parse_from([
            "llmimage", "cost", "--v", "100000", "--k", "5", "--d", "4096", "--epsilon", "1e-6", "--beta-max", "100",
            "--n", "4", "--format", "json",
        ])
        .expect("cost arguments parse");
        let mut buf = Vec::new();
        run(&cli, &mut buf).map_err(|f| f.error)?;
        let elapsed = t.elapsed();
        let rows: Vec<serde_json::Value> = serde_json::from_slice(&buf)?;
        let calls = |name: &str| {
            rows.iter()
                .find(|r| r["strategy"] == name)
                .and_then(|r| r["calls_per_output"].as_f64())
                .unwrap_or(f64::NAN)
        };
        let three_sig = |x: f64| {
            let scale = 10f64.powi(x.log10().floor() as i32 - 2);
            (x / scale).round() * scale
        };
        o.check((calls("logprob-free") - 800_000.0).abs() < 1e-6, format!("logprob-free {}", calls("logprob-free")));
        o.check(calls("fast") == 20_000.0, format!("fast {}", calls("fast")));
        o.check(calls("stable") == 25_000.0, format!("stable {}", calls("stable")));
        o.check(
            three_sig(calls("stochastic")) == 133_000.0,
            format!("stochastic {:.0}", calls("stochastic")),
        );
        o.check(calls("image") <= 1025.0, format!("image {}", calls("image")));
        o.check(elapsed < Duration::from_secs(1), format!("{elapsed:.2?}"));
        Ok(())
    })
}

// 2. Oracle equivalence of the three deterministic strategies.
fn extraction_oracle(route: Route) -> Outcome {
    guarded(|o| {
        let t = Instant::now();
        let m = model(MockModelSpec {
            k_max: 5,
            beta_max: 100.0,
            ..spec(1000, 64, 2024)
        })?;
        let ctx = "the quick brown fox";
        let oracle = m.oracle_distribution(ctx, 0)?;

        let conn = route.connect(&m)?;
        let fast = conn.extractor()?.extract_fast(ctx)?;
        let (e, calls) = (linf(fast.as_slice(), oracle.as_slice()), conn.session.calls());
        o.check(e < 1e-6 && calls == 200, format!("fast err {e:.1e} calls {calls}"));
        o.artifact("fast.csv", vector_csv(fast.as_slice()).as_bytes());

        let conn = route.connect(&m)?;
        let stable = conn.extractor()?.extract_stable(ctx)?;
        let (e, calls) = (linf(stable.as_slice(), oracle.as_slice()), conn.session.calls());
        o.check(e < 1e-9 && calls == 251, format!("stable err {e:.1e} calls {calls}"));
        o.artifact("stable.csv", vector_csv(stable.as_slice()).as_bytes());

        let conn = route.connect(&m)?;
        let free = conn.extractor()?.extract_logprob_free(ctx, 1e-4)?;
        let (e, calls) = (linf(free.probs.as_slice(), oracle.as_slice()), conn.session.calls());
        o.check(e < 2e-4 && calls <= 1000 * 20, format!("logprob-free err {e:.1e} calls {calls}"));
        o.artifact("logprob_free.csv", vector_csv(free.probs.as_slice()).as_bytes());

        let elapsed = t.elapsed();
        if route == Route::InProcess {
            o.check(elapsed < Duration::from_secs(30), format!("{elapsed:.1?}"));
        }
        Ok(())
    })
}

// 3. Fast unbiasing breaks down where stable does not.
fn stability_regression(route: Route) -> Outcome {
    guarded(|o| {
        let v = 1000;
        // Logits spread evenly over 80 nats.
        let logits: Vec<f64> = (0..v).map(|i| -80.0 * i as f64 / (v - 1) as f64).collect();
        let weights = logits.iter().flat_map(|&l| [l, 0.0]).collect();
        let table = BTreeMap::from([("c".to_string(), vec![1.0, 0.0])]);
        let m = Arc::new(MockModel::with_weights(
            MockModelSpec {
                v,
                d: 2,
                ..MockModelSpec::default()
            },
            weights,
            Embedding::Table(table),
        )?);
        let spread = logits[0] - logits[v - 1];
        let oracle = m.oracle_distribution("c", 0)?;

        let conn = route.connect(&m)?;
        let fast = Extractor::new(
            &conn.session,
            ExtractOptions {
                beta: Some(100.0),
                ..ExtractOptions::default()
            },
        )?
        .extract_fast("c");
        let fast_desc = match &fast {
            Err(e) => format!("fast raised {}", e.to_string().split(':').next().unwrap_or_default()),
            Ok(p) => format!("fast err {:.1e}", linf(p.as_slice(), oracle.as_slice())),
        };
        let fast_broke = match &fast {
            Err(llmimage::Error::NumericalInstability(_)) => true,
            Err(_) => false,
            Ok(p) => linf(p.as_slice(), oracle.as_slice()) > 1e-3,
        };
        o.check(fast_broke, format!("spread {spread} nats, beta 100: {fast_desc}"));

        let conn = route.connect(&m)?;
        let stable = conn.extractor()?.extract_stable("c")?;
        let e = linf(stable.as_slice(), oracle.as_slice());
        o.check(e < 1e-9, format!("stable err {e:.1e}"));
        o.artifact("stable.csv", vector_csv(stable.as_slice()).as_bytes());
        o.artifact("fast", fast_desc.as_bytes());
        Ok(())
    })
}

// 4. Stochastic extraction over four replicas.
fn stochastic(route: Route) -> Outcome {
    guarded(|o| {
        let trials = 20;
        let (mut total, mut worst, mut completed) = (0u64, 0f64, 0);
        for seed in 0..trials {
            let m = model(MockModelSpec {
                n_replicas: 4,
                replica_noise: 1e-3,
                k_max: 5,
                ..spec(300, 16, 100 + seed)
            })?;
            let conn = route.connect(&m)?;
            let out = conn.extractor()?.extract_stochastic("stochastic context", Some(4))?;
            total += conn.session.calls();
            let err = (0..4)
                .map(|r| Ok(linf(out.probs.as_slice(), m.oracle_distribution("stochastic context", r)?.as_slice())))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(err);
            completed += usize::from(err < 1e-8 && !out.degenerate);
            o.artifact(format!("trial{seed}.csv"), vector_csv(out.probs.as_slice()).as_bytes());
        }
        let mean = total as f64 / trials as f64;
        o.check(completed >= 1, format!("{completed}/{trials} matched a replica (worst {worst:.1e})"));
        o.check((320.0..=600.0).contains(&mean), format!("mean calls {mean:.1} (target 400)"));
        o.artifact("calls", total.to_string().as_bytes());
        Ok(())
    })
}

// 5. Embedding size discovery across sizes.
fn embedding_sizes(route: Route) -> Outcome {
    guarded(|o| {
        for d in [32usize, 64, 512, 768, 1024] {
            let t = Instant::now();
            let v = 8 * d;
            let m = model(MockModelSpec {
                k_max: v,
                ..spec(v, d, d as u64)
            })?;
            let conn = route.connect(&m)?;
            let ex = conn.extractor()?;
            let prompts: Vec<String> = (0..d + 100).map(unique_prompt).collect();
            let cols = collect_outputs(&ex, llmimage::extraction::Strategy::Stable, &prompts)?;
            let mat = Mat::from_fn(v, cols.len(), |i, j| cols[j].as_slice()[i]);
            let est = estimate_embedding_size(mat.as_ref(), 1e-6)?;
            let drop = est.spectrum.drop_ratio_after(est.d).unwrap_or(f64::NAN);
            let elapsed = t.elapsed();
            o.check(
                est.d == d && drop < 1e-4,
                format!("d={d}: estimate {} drop {drop:.1e} in {elapsed:.1?}", est.d),
            );
            if d == 1024 {
                o.check(elapsed < Duration::from_secs(120), format!("largest case {elapsed:.1?}"));
            }
            let bytes: Vec<u8> = cols.iter().flat_map(|c| c.as_slice().iter().flat_map(|x| x.to_le_bytes())).collect();
            o.artifact(format!("outputs_d{d}"), &bytes);
            o.artifact(format!("spectrum_d{d}.csv"), spectrum_csv(&est.spectrum).as_bytes());
        }
        Ok(())
    })
}

/// The d = 64 image shared by criteria 6 and 7.
fn d64(route: Route) -> Result<(Arc<MockModel>, ModelImage)> {
    let m = model(MockModelSpec {
        k_max: 5,
        ..spec(1000, 64, 64)
    })?;
    let conn = route.connect(&m)?;
    let image = collect(&conn, 100, "d64")?;
    Ok((m, image))
}

// 6. Noise columns inflate the estimate one for one.
fn corruption(image: &ModelImage) -> Outcome {
    guarded(|o| {
        o.check(image.d_estimate() == 64, format!("clean estimate {}", image.d_estimate()));
        o.artifact("d64.llmimg", &image.to_bytes());
        let base = image.matrix();
        for c in [1usize, 5, 50] {
            let mut g = SplitMix64::new(c as u64);
            let noise: Vec<ClrVector> = (0..c)
                .map(|_| ClrVector::centered(g.gaussians(base.nrows(), 1.0)))
                .collect::<Result<_>>()?;
            let cols = base.ncols();
            let mat = Mat::from_fn(base.nrows(), cols + c, |i, j| {
                if j < cols {
                    base[(i, j)]
                } else {
                    noise[j - cols].as_slice()[i]
                }
            });
            let d = estimate_embedding_size(mat.as_ref(), image.tolerance())?.d;
            o.check(d == 64 + c, format!("c={c}: {d}"));
        }
        Ok(())
    })
}

// 7. Image-assisted extraction.
fn fast_extraction(route: Route, m: &Arc<MockModel>, image: &ModelImage) -> Outcome {
    guarded(|o| {
        let fast_conn = route.connect(m)?;
        let direct_conn = route.connect(m)?;
        let (fast_ex, direct_ex) = (fast_conn.extractor()?, direct_conn.extractor()?);
        let (mut max_calls, mut worst) = (0u64, 0f64);
        let mut files = String::new();
        for i in 0..100 {
            let ctx = format!("held-out context {i}");
            let before = fast_conn.session.calls();
            let fast = fast_extract(image, &fast_ex, &ctx, &FastExtractOptions::default())?;
            max_calls = max_calls.max(fast_conn.session.calls() - before);
            let direct = direct_ex.extract_stable(&ctx)?;
            worst = worst.max(linf(fast.probs.as_slice(), direct.as_slice()));
            files.push_str(&vector_csv(fast.probs.as_slice()));
        }
        let speedup = 251.0 / max_calls as f64;
        o.check(max_calls <= 17, format!("max calls {max_calls} (speedup {speedup:.1}x)"));
        o.check(speedup >= 14.0, "speedup >= 14x");
        o.check(worst < 1e-6, format!("worst err vs direct {worst:.1e}"));
        o.artifact("fast_outputs.csv", files.as_bytes());
        Ok(())
    })
}

// 8. Attribution across a checkpoint family.
fn attribution(route: Route) -> Outcome {
    guarded(|o| {
        let fam = make_checkpoint_family(&spec(400, 32, 8), &vec![UpdateKind::FullFinetune(1e-2); 5])?;
        let fam: Vec<Arc<MockModel>> = fam.into_iter().map(Arc::new).collect();
        let conns = fam.iter().map(|m| route.connect(m)).collect::<Result<Vec<_>>>()?;
        let images = conns
            .iter()
            .enumerate()
            .map(|(i, c)| collect(c, 100, &format!("ckpt{i}")))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ModelImage> = images.iter().collect();
        let th = AttributionThresholds::default();
        let (mut correct, mut min_margin) = (0, f64::INFINITY);
        let mut report_text = String::new();
        for i in 0..100 {
            let source = i % 5;
            let p = conns[source].extractor()?.extract_stable(&format!("probe {i}"))?;
            let report = attribute(&refs, &clr(&p)?, &th)?;
            if report.best_match.as_deref() == Some(format!("ckpt{source}").as_str()) && report.margin >= 100.0 {
                correct += 1;
            }
            min_margin = min_margin.min(report.margin);
            report_text.push_str(&serde_json::to_string(&report)?);
        }
        o.check(correct == 100, format!("{correct}/100 attributed, min margin {min_margin:.1e}"));
        for (i, img) in images.iter().enumerate() {
            o.artifact(format!("ckpt{i}.llmimg"), &img.to_bytes());
        }
        o.artifact("reports.json", report_text.as_bytes());
        Ok(())
    })
}

// 9. Update classification over ten seeds.
fn classification(route: Route) -> Outcome {
    guarded(|o| {
        let kinds = [
            UpdateKind::Clone,
            UpdateKind::Clone,
            UpdateKind::HiddenPrompt(" [system: answer briefly]".into()),
            UpdateKind::Lora(8),
            UpdateKind::FullFinetune(1e-2),
        ];
        let expected = [
            Classification::NoUpdate,
            Classification::HiddenPromptOrPartialFinetune,
            Classification::LoraUpdate,
            Classification::FullFinetune,
        ];
        let (mut wrong, mut lora_ranks) = (Vec::new(), Vec::new());
        let mut reports = String::new();
        for seed in 0..10 {
            let fam = make_checkpoint_family(
                &MockModelSpec {
                    k_max: 20,
                    ..spec(200, 32, 900 + seed)
                },
                &kinds,
            )?;
            let images = fam
                .into_iter()
                .enumerate()
                .map(|(i, m)| collect(&route.connect(&Arc::new(m))?, 20, &format!("s{seed}m{i}")))
                .collect::<Result<Vec<_>>>()?;
            let base = &images[0];
            for (other, want) in images[1..].iter().zip(expected) {
                let change = compare_images(base, other)?;
                let logit = detect_logit_change(base, other, None, 1e-6)?;
                let report = UpdateReport::new(logit, change, base.d_estimate());
                if report.classification != want {
                    wrong.push(format!("seed {seed}: {:?} for {want:?}", report.classification));
                }
                if want == Classification::LoraUpdate {
                    lora_ranks.push(match change {
                        ImageChange::LowRank(r) => r,
                        _ => 0,
                    });
                }
                reports.push_str(&serde_json::to_string(&report)?);
            }
        }
        o.check(wrong.is_empty(), format!("misclassified: {}", wrong.len()));
        if !wrong.is_empty() {
            o.check(false, wrong.join(", "));
        }
        o.check(lora_ranks.iter().all(|&r| r == 8), format!("lora ranks {lora_ranks:?}"));
        o.artifact("reports.json", reports.as_bytes());
        Ok(())
    })
}

/// Criteria 2 to 9 on one route, keyed by criterion number.
fn middle_criteria(route: Route) -> BTreeMap<usize, (Outcome, Duration)> {
    fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    }
    let mut out = BTreeMap::new();
    out.insert(2, timed(|| extraction_oracle(route)));
    out.insert(3, timed(|| stability_regression(route)));
    out.insert(4, timed(|| stochastic(route)));
    out.insert(5, timed(|| embedding_sizes(route)));
    match &d64(route) {
        Ok((m, image)) => {
            out.insert(6, timed(|| corruption(image)));
            out.insert(7, timed(|| fast_extraction(route, m, image)));
        }
        Err(e) => {
            for n in [6, 7] {
                let mut o = Outcome::default();
                o.failures.push(format!("collecting the d=64 image failed: {e}"));
                out.insert(n, (o, Duration::ZERO));
            }
        }
    }
    out.insert(8, timed(|| attribution(route)));
    out.insert(9, timed(|| classification(route)));
    out
}

// 11. Property suites at scale.
fn properties() -> Outcome {
    guarded(|o| {
        let mut g = SplitMix64::new(11);
        let (mut clr_worst, mut alr_worst) = (0f64, 0f64);
        for _ in 0..10_000 {
            let v = 2 + g.below(9_999) as usize;
            let l: Vec<f64> = (0..v).map(|_| 60.0 * g.next_f64() - 30.0).collect();
            let p = softmax(&LogitVector::new(l)?);
            let back = softmax(&LogitVector::new(clr(&p)?.into_inner())?);
            clr_worst = clr_worst.max(linf(back.as_slice(), p.as_slice()));
            let back = alr_inverse(&alr(&p)?)?;
            alr_worst = alr_worst.max(linf(back.as_slice(), p.as_slice()));
        }
        o.check(clr_worst <= 1e-9, format!("clr roundtrip {clr_worst:.1e}"));
        o.check(alr_worst <= 1e-9, format!("alr roundtrip {alr_worst:.1e}"));

        let m = MockModel::new(spec(1000, 64, 5))?;
        let base = api_query(&m, "fingerprint", &BiasSpec::new(), 5, 0)?;
        let reference = (base.pairs[0].0, base.pairs[1].0);
        let want = fingerprint(&base, reference)?;
        let mut worst = 0f64;
        for _ in 0..1000 {
            let mut bias = BiasSpec::new();
            // At most k - 2 entries, so both reference tokens stay in the top k.
            for _ in 0..1 + g.below(3) {
                let t = g.below(1000) as u32;
                if t != reference.0 && t != reference.1 {
                    bias = bias.with(t, 200.0 * g.next_f64() - 100.0);
                }
            }
            let r = api_query(&m, "fingerprint", &bias, 5, 0)?;
            worst = worst.max((fingerprint(&r, reference)? - want).abs());
        }
        o.check(worst <= 1e-12, format!("fingerprint drift {worst:.1e} over 1000 biases"));
        Ok(())
    })
}

fn report(n: usize, title: &str, o: &Outcome, elapsed: Duration) -> bool {
    let status = if o.passed() { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {status} {title} [{elapsed:.1?}]: {}", o.summary());
    o.passed()
}

#[test]
fn acceptance() {
    let titles = [
        "",
        "cost table",
        "extraction oracle equivalence",
        "numerical stability regression",
        "stochastic extraction",
        "embedding-size discovery",
        "corruption sensitivity",
        "fast extraction",
        "attribution",
        "update classification",
        "transport equivalence",
        "property suites",
    ];
    let mut all = true;

    let t = Instant::now();
    let o = cost_table();
    all &= report(1, titles[1], &o, t.elapsed());

    let local = middle_criteria(Route::InProcess);
    for (n, (o, elapsed)) in &local {
        all &= report(*n, titles[*n], o, *elapsed);
    }

    let t = Instant::now();
    let mut transport = Outcome::default();
    for route in [Route::Http { cache: true }, Route::Http { cache: false }] {
        let remote = middle_criteria(route);
        for (n, (o, _)) in &remote {
            let (base, _) = &local[n];
            transport.check(o.passed(), format!("{} #{n} {}", route.name(), if o.passed() { "ok" } else { "failed" }));
            if !o.passed() {
                transport.check(false, format!("{} #{n}: {}", route.name(), o.summary()));
            }
            let differing: Vec<&String> = base
                .artifacts
                .iter()
                .filter(|(k, v)| o.artifacts.get(*k) != Some(*v))
                .map(|(k, _)| k)
                .collect();
            transport.check(
                differing.is_empty() && base.artifacts.len() == o.artifacts.len(),
                format!("{} #{n} files identical {differing:?}", route.name()),
            );
        }
    }
    if transport.passed() {
        let files: usize = local.values().map(|(o, _)| o.artifacts.len()).sum();
        transport.notes = vec![format!("criteria 2-9 pass over http (cache on and off), {files} result files bit-identical")];
    }
    all &= report(10, titles[10], &transport, t.elapsed());

    let t = Instant::now();
    all &= report(11, titles[11], &properties(), t.elapsed());

    assert!(all, "acceptance criteria failed");
}

#[test]
fn probability_vectors_roundtrip_through_csv() {
    let p = ProbVector::new(vec![0.25, 0.5, 0.125, 0.125]).unwrap();
    let text = vector_csv(p.as_slice());
    assert_eq!(llmimage::io::parse_vector_csv(&text).unwrap(), p.as_slice());
}
