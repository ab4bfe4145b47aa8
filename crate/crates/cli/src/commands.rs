use crate::cli::*;
use crate::error::CliError;
use crate::service::{self, AnnotationLog, ServiceConfig};
use o2m_core::backends::{Backends, BackendsConfig};
use o2m_core::corpus::{
    generate_fixture_with_quality, load_contexts, load_corpus, load_preferences, write_corpus, write_preferences,
    DialogueContext, FixtureOptions, LoadOptions, O2mSample,
};
use o2m_core::metrics::{evaluate_set, summarize, write_reports_jsonl, EvalOptions, UeMode};
use o2m_core::mrg::{generate_mrg, select_demonstrations, Demonstration, GenOptions, Strategy};
use o2m_core::odrp::{
    fine_tune_hard_negatives, select_response, train, FeatureMode, Objective, OdrpModel, TrainConfig,
};
use o2m_core::pipeline::{
    evaluate_corpus, evaluate_sets, parse_judgments, parse_records, significance, tally_preferences, write_records,
    write_summary_csv, RunOptions, RunRecord, Selector, SelectorName, TestKind,
};
use serde::Serialize;
use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

/// Renders into memory, then writes the file or standard output.
fn emit(path: Option<&Path>, render: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    match path {
        Some(p) => fs::write(p, &buf).map_err(|e| CliError::io(p, e)),
        None => io::stdout().write_all(&buf).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_backends(args: &ConfigArgs) -> Result<Backends> {
    load_seeded(args, args.backend_seed)
}

fn load_seeded(args: &ConfigArgs, seed: Option<u64>) -> Result<Backends> {
    let mut cfg = BackendsConfig::load(&args.config)?;
    if let Some(seed) = seed {
        for section in [&mut cfg.chat, &mut cfg.embed, &mut cfg.nli] {
            section.seed = seed;
        }
        if let Some(c) = cfg.coherence.as_mut() {
            c.seed = seed;
        }
    }
    Ok(cfg.build()?)
}

fn ue_mode(arg: UeModeArg) -> UeMode {
    match arg {
        UeModeArg::Indicator => UeMode::Indicator,
        UeModeArg::Probability => UeMode::Probability,
    }
}

fn strategy_of(args: &StrategyArgs) -> Result<Strategy> {
    Ok(Strategy::new(args.strategy, args.n, args.shots)?)
}

fn gen_options(args: &StrategyArgs) -> Result<GenOptions> {
    if !(args.temperature >= 0.0 && args.temperature.is_finite()) {
        return Err(CliError::Usage("--temperature must be a non-negative number".into()));
    }
    Ok(GenOptions { temperature: args.temperature, ..GenOptions::default() })
}

fn demonstrations(args: &StrategyArgs, backends: &Backends) -> Result<Vec<Demonstration>> {
    match (&args.demos, args.shots) {
        (_, 0) => Ok(Vec::new()),
        (None, k) => Err(CliError::Usage(format!("--shots {k} needs a --demos corpus"))),
        (Some(path), k) => {
            let corpus = load_corpus(path, &LoadOptions::default())?;
            Ok(select_demonstrations(&corpus, k, backends.similarity.as_ref())?)
        }
    }
}

pub fn fixture(args: &FixtureArgs) -> Result<()> {
    let fx = generate_fixture_with_quality(
        args.seed,
        args.count,
        args.n,
        &FixtureOptions { missing_rate: args.missing_rate },
    )?;
    emit(args.out.as_deref(), |w| write_corpus(w, &fx.samples))?;
    if let Some(p) = &args.preferences {
        let prefs = fx.preferences()?;
        emit(Some(p), |w| write_preferences(w, &prefs))?;
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let strategy = strategy_of(&args.strategy)?;
    let opts = gen_options(&args.strategy)?;
    let backends = load_seeded(&args.config, args.seed.or(args.config.backend_seed))?;
    let demos = demonstrations(&args.strategy, &backends)?;
    let contexts = load_contexts(&args.input, None)?;
    let mut samples = Vec::with_capacity(contexts.len());
    let mut logs = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        eprintln!("[{}/{}] {} ({} n={})", i + 1, contexts.len(), ctx.id, strategy.kind, strategy.n);
        let generation = generate_mrg(&strategy, ctx, &demos, backends.chat.as_ref(), &opts)?;
        for w in &generation.log.warnings {
            eprintln!("  warning: {w}");
        }
        samples.push(O2mSample::new(ctx.clone(), generation.set, None)?);
        logs.push((ctx.id.clone(), generation.log));
    }
    emit(Some(&args.output), |w| write_corpus(w, &samples))?;
    if let Some(p) = &args.log {
        emit(Some(p), |w| {
            for (id, log) in &logs {
                serde_json::to_writer(&mut *w, &serde_json::json!({ "id": id, "log": log }))?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let backends = load_backends(&args.config)?;
    let samples = load_corpus(&args.input, &LoadOptions::default())?;
    let opts = EvalOptions { ue_mode: ue_mode(args.ue_mode) };
    let reports: Vec<(String, _)> = samples
        .iter()
        .map(|s| (s.id().to_string(), evaluate_set(s, &backends, &opts)))
        .collect();
    for (id, r) in &reports {
        for f in &r.failures {
            eprintln!("{id}: {f}");
        }
    }
    if let Some(p) = &args.out {
        emit(Some(p), |w| write_reports_jsonl(w, &reports))?;
    }
    let summary = summarize(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    emit(args.summary.as_deref(), |w| o2m_core::metrics::write_summary_csv(w, &summary))
}

fn load_model(path: &Path) -> Result<OdrpModel> {
    Ok(OdrpModel::load(path)?)
}

pub fn selector_for(name: SelectorName, models: &ModelPaths) -> Result<Selector> {
    fn path<'a>(p: &'a Option<PathBuf>, name: SelectorName, flag: &str) -> Result<&'a Path> {
        p.as_deref().ok_or_else(|| CliError::Usage(format!("selector {name} needs {flag}")))
    }
    Ok(match name {
        SelectorName::Odrp => Selector::model(name, load_model(path(&models.model, name, "--model")?)?)?,
        SelectorName::OdrpHn => Selector::model(name, load_model(path(&models.hn_model, name, "--hn-model")?)?)?,
        SelectorName::Cls => Selector::model(name, load_model(path(&models.cls_model, name, "--cls-model")?)?)?,
        SelectorName::Pref | SelectorName::External => Selector::Scorer { name },
        SelectorName::Rand => Selector::Random { seed: models.rand_seed },
        SelectorName::Base => Selector::Base,
    })
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let backends = load_backends(&args.config)?;
    let opts = RunOptions {
        gen: gen_options(&args.strategy)?,
        eval: EvalOptions { ue_mode: ue_mode(args.ue_mode) },
    };
    let selectors: Vec<Selector> =
        args.selectors.iter().map(|n| selector_for(*n, &args.models)).collect::<Result<_>>()?;
    let mut records: Vec<RunRecord> = Vec::new();
    let mut rows = Vec::new();
    if let Some(path) = &args.sets {
        let samples = load_corpus(path, &LoadOptions::default())?;
        for sel in &selectors {
            eprintln!("selector {} over {} sets", sel.name(), samples.len());
            let run = evaluate_sets(&samples, sel, &backends, &opts)?;
            report_failures(&run.failures);
            rows.push(run.summary);
            records.extend(run.records);
        }
    } else {
        let strategy = strategy_of(&args.strategy)?;
        let demos = demonstrations(&args.strategy, &backends)?;
        let path = args.input.as_ref().expect("clap requires --input or --sets");
        let contexts = load_contexts(path, None)?;
        for sel in &selectors {
            eprintln!("selector {} over {} contexts ({} n={})", sel.name(), contexts.len(), strategy.kind, strategy.n);
            let run = evaluate_corpus(&contexts, &strategy, &demos, sel, &backends, &opts)?;
            report_failures(&run.failures);
            rows.push(run.summary);
            records.extend(run.records);
        }
    }
    if let Some(p) = &args.records {
        emit(Some(p), |w| write_records(w, &records))?;
    }
    emit(args.summary.as_deref(), |w| write_summary_csv(w, &rows))
}

fn report_failures(failures: &[(String, String)]) {
    for (id, e) in failures {
        eprintln!("  {id}: {e}");
    }
}

#[derive(Serialize)]
struct SelectionLine<'a> {
    sample_id: &'a str,
    selected_index: usize,
    selected_text: &'a str,
    scores: &'a [Option<f64>],
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let backends = load_backends(&args.config)?;
    let model = load_model(&args.model)?;
    let samples = load_corpus(&args.input, &LoadOptions::default())?;
    let mut out = Vec::new();
    for s in &samples {
        let sel = select_response(&s.responses, &s.context, &model, backends.embed.as_ref())?;
        let line = SelectionLine {
            sample_id: s.id(),
            selected_index: sel.index,
            selected_text: &sel.text,
            scores: &sel.scores,
        };
        out.push(serde_json::to_string(&line).expect("selection serialises"));
    }
    emit(args.output.as_deref(), |w| {
        for l in &out {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

pub fn demos(args: &DemosArgs) -> Result<()> {
    let backends = load_backends(&args.config)?;
    let corpus = load_corpus(&args.input, &LoadOptions::default())?;
    let picked = select_demonstrations(&corpus, args.k, backends.similarity.as_ref())?;
    emit(None, |w| {
        for d in &picked {
            if args.scores {
                writeln!(w, "{}\t{}", d.context.id, d.combined_diversity)?;
            } else {
                writeln!(w, "{}", d.context.id)?;
            }
        }
        Ok(())
    })
}

fn trace_path(args: &TrainArgs) -> PathBuf {
    args.trace.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    })
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    if args.hard_negatives && args.base_model.is_none() {
        return Err(CliError::Usage("--hard-negatives requires --base-model".into()));
    }
    if args.base_model.is_some() && !args.hard_negatives {
        return Err(CliError::Usage("--base-model is only used with --hard-negatives".into()));
    }
    let pairs = load_preferences(&args.prefs)?;
    let base = args.base_model.as_deref().map(load_model).transpose()?;
    let mode = match &base {
        Some(b) => b.feature_mode,
        None if args.response_only => FeatureMode::ResponseOnly,
        None => FeatureMode::Context,
    };
    let contexts: HashMap<String, DialogueContext> = match (&args.contexts, mode) {
        (Some(p), _) => load_contexts(p, None)?.into_iter().map(|c| (c.id.clone(), c)).collect(),
        (None, FeatureMode::ResponseOnly) => HashMap::new(),
        (None, FeatureMode::Context) => {
            return Err(CliError::Usage("--contexts is required unless the model is response-only".into()))
        }
    };
    let backends = load_backends(&args.config)?;
    let defaults = if args.hard_negatives { TrainConfig::hard_negative() } else { TrainConfig::default() };
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        learning_rate: args.lr,
        seed: args.seed,
        weight_decay: args.weight_decay,
        hidden_width: args.hidden,
        feature_mode: mode,
        objective: match args.objective {
            ObjectiveArg::Pairwise => Objective::Pairwise,
            ObjectiveArg::Bce => Objective::Bce,
        },
    };
    eprintln!("training on {} pairs for {} epoch(s)", pairs.len(), cfg.epochs);
    let outcome = match &base {
        Some(b) => fine_tune_hard_negatives(b, &pairs, &contexts, args.fraction, &cfg, backends.embed.as_ref())?,
        None => train(&pairs, &contexts, &cfg, backends.embed.as_ref())?,
    };
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        eprintln!("  epoch {}: loss {l:.6}", i + 1);
    }
    outcome.model.save(&args.out)?;
    emit(Some(&trace_path(args)), |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in outcome.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        Ok(())
    })
}

pub fn tally(args: &TallyArgs) -> Result<()> {
    let judgments = parse_judgments(&read_text(&args.input)?)?;
    let rows = tally_preferences(&judgments)?;
    emit(args.out.as_deref(), |w| {
        writeln!(w, "comparison_id,judgments,win,tie,loss")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", r.comparison_id, r.judgments, r.win, r.tie, r.loss)?;
        }
        Ok(())
    })
}

fn metric_value(r: &RunRecord, m: MetricArg) -> Option<f64> {
    let rep = &r.metric_report;
    match m {
        MetricArg::SelectedUe => r.selected_ue,
        MetricArg::SelectedUnieval => r.selected_unieval,
        MetricArg::DLex => rep.d_lex,
        MetricArg::DSem => rep.d_sem,
        MetricArg::Ue => rep.ue,
        MetricArg::Unieval => rep.unieval,
        MetricArg::Distinct1 => rep.distinct1,
        MetricArg::Distinct2 => rep.distinct2,
    }
}

fn metric_name(m: MetricArg) -> &'static str {
    match m {
        MetricArg::SelectedUe => "selected_ue",
        MetricArg::SelectedUnieval => "selected_unieval",
        MetricArg::DLex => "d_lex",
        MetricArg::DSem => "d_sem",
        MetricArg::Ue => "ue",
        MetricArg::Unieval => "unieval",
        MetricArg::Distinct1 => "distinct1",
        MetricArg::Distinct2 => "distinct2",
    }
}

fn records_at(path: &Path) -> Result<Vec<RunRecord>> {
    parse_records(&read_text(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn significance_cmd(args: &SignificanceArgs) -> Result<()> {
    let (a, b) = (records_at(&args.a)?, records_at(&args.b)?);
    let name = metric_name(args.metric);
    let (va, vb): (Vec<f64>, Vec<f64>) = match args.test {
        TestArg::Welch => (
            a.iter().filter_map(|r| metric_value(r, args.metric)).collect(),
            b.iter().filter_map(|r| metric_value(r, args.metric)).collect(),
        ),
        TestArg::Paired => {
            let by_id: HashMap<&str, &RunRecord> = b.iter().map(|r| (r.sample_id.as_str(), r)).collect();
            let mut pairs = Vec::new();
            for r in &a {
                let other = by_id.get(r.sample_id.as_str()).ok_or_else(|| {
                    CliError::Usage(format!("paired test: sample {} is missing from {}", r.sample_id, args.b.display()))
                })?;
                if let (Some(x), Some(y)) = (metric_value(r, args.metric), metric_value(other, args.metric)) {
                    pairs.push((x, y));
                }
            }
            pairs.into_iter().unzip()
        }
    };
    let test = match args.test {
        TestArg::Welch => TestKind::Welch,
        TestArg::Paired => TestKind::Paired,
    };
    let result = significance(name, &va, &vb, test)?;
    println!("{}", serde_json::to_string(&result).expect("result serialises"));
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let backends = load_backends(&args.config)?;
    let strategy = strategy_of(&args.strategy)?;
    let demos = demonstrations(&args.strategy, &backends)?;
    let name = args.selector.unwrap_or(if args.models.model.is_some() { SelectorName::Odrp } else { SelectorName::Rand });
    let selector = selector_for(name, &args.models)?;
    let token = match &args.token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| CliError::Usage(format!("environment variable {var} is not set")))?),
        None => None,
    };
    let annotations = match &args.annotations {
        Some(p) => AnnotationLog::open(p).map_err(|e| CliError::io(p, e))?,
        None => AnnotationLog::in_memory(),
    };
    let cfg = ServiceConfig {
        strategy,
        demos,
        selector,
        opts: RunOptions { gen: gen_options(&args.strategy)?, ..RunOptions::default() },
        token,
    };
    let addr = format!("{}:{}", args.host, args.port);
    let loopback = matches!(args.host.as_str(), "127.0.0.1" | "localhost" | "::1");
    if !loopback && cfg.token.is_none() {
        eprintln!("warning: listening on {addr} without a bearer token");
    }
    let state = service::AppState::new(backends, cfg, annotations);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
        eprintln!("listening on http://{addr} (selector {name}, strategy {} n={})", strategy.kind, strategy.n);
        axum::serve(listener, service::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Io(e.to_string()))
    })
}
