use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use dxtrust::confidence::{score_reasoning, ConfidenceReport, ScoreError, ScoringProviders};
use dxtrust::config::{LcsMode, ScoringConfig};
use dxtrust::criteria::{CriteriaError, CriteriaSet};
use dxtrust::datasets::{load_dialogues, DatasetError, Dialogue};
use dxtrust::egdr::oracle::{OraclePolicy, OracleResponder};
use dxtrust::egdr::{diagnose, run_baseline, DiagnosticHypothesis, EgdrConfig, PromptingMode};
use dxtrust::evalharness::{
    ablation_sweep, check_labels, compute_metrics, dcs_distribution, declared_labels, emit_report, join_predictions,
    subgroup_accuracy, AblationStats, EvalError, ReportFormat, ReportInput, SweepDefaults,
};
use dxtrust::exec::ExecMode;
use dxtrust::kgstore::{EntityKind, KgError, KnowledgeGraph};
use dxtrust::providers::{
    ChatProvider, Embedder, LocalEmbedder, ProviderError, RecordingProvider, RemoteChat, RemoteConfig, RemoteEmbedder,
    StubProvider, LOCAL_DIMENSION,
};

use crate::manifest::{ConfigSnapshot, RunManifest};
use crate::{
    AblateArgs, ChatBackend, Command, DiagnoseArgs, EvalArgs, FormatArg, KgAction, LabelArgs, LcsArg, Mode, Policy,
    ReportArgs, ScoreArgs, ScoreBackend, EXIT_RUNTIME, EXIT_VALIDATION,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn invalid(context: &str, e: impl Display) -> CliError {
    CliError::Validation(format!("{context}: {e}"))
}

fn runtime(context: &str, e: impl Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Kg { action: KgAction::Validate { kg, criteria, out } } => {
            kg_validate(&kg, criteria.as_deref(), out.as_deref())
        }
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Score(a) => cmd_score(a),
        Command::Label(a) => cmd_label(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_kg(path: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load(path).map_err(|e| match e {
        KgError::Io(_) => runtime(&path.display().to_string(), e),
        _ => invalid(&path.display().to_string(), e),
    })
}

fn load_criteria(path: &Path, kg: &KnowledgeGraph) -> Result<CriteriaSet> {
    CriteriaSet::load(path, kg).map_err(|e| match e {
        CriteriaError::Io(_) => runtime(&path.display().to_string(), e),
        _ => invalid(&path.display().to_string(), e),
    })
}

fn load_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    let mut corpus = load_dialogues(path).map_err(|e| match e {
        DatasetError::Io(_) => runtime(&path.display().to_string(), e),
        _ => invalid(&path.display().to_string(), e),
    })?;
    corpus.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(corpus)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(&path.display().to_string(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| invalid(&format!("{} line {}", path.display(), i + 1), e)))
        .collect()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(&path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| invalid(&path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(&dir.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(&path.display().to_string(), e))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let text: String = records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect();
    write_text(path, &text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn finish(mut manifest: RunManifest, output: &Path, is_dir: bool) -> Result<()> {
    manifest.outputs.insert(0, output.to_path_buf());
    manifest.finish(&RunManifest::path_for(output, is_dir)).map_err(|e| runtime("manifest", e))
}

/// Map over `items` on a pool of `workers` threads, keeping input order.
#[cfg(feature = "parallel")]
fn batch<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 {
        return Ok(ExecMode::Sequential.map(items, f));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| runtime("thread pool", e))?;
    Ok(pool.install(|| ExecMode::Parallel.map(items, f)))
}

#[cfg(not(feature = "parallel"))]
fn batch<T, R, F>(items: &[T], _workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    Ok(ExecMode::Sequential.map(items, f))
}

fn provider_error(e: ProviderError) -> CliError {
    match e {
        ProviderError::Config(_) | ProviderError::Script { .. } => invalid("provider", e),
        _ => runtime("provider", e),
    }
}

fn remote_config(model: &str, max_concurrency: usize) -> Result<RemoteConfig> {
    let mut cfg = RemoteConfig::from_env(model).map_err(provider_error)?;
    cfg.max_concurrency = max_concurrency.max(1);
    Ok(cfg)
}

fn chat_backend(
    backend: ChatBackend,
    script: Option<&Path>,
    policy: Policy,
    kg: &Arc<KnowledgeGraph>,
    criteria: &Arc<CriteriaSet>,
    model: &str,
    max_concurrency: usize,
) -> Result<Box<dyn ChatProvider>> {
    Ok(match backend {
        ChatBackend::Stub => {
            let script = script.ok_or_else(|| CliError::Validation("--provider stub requires --script".into()))?;
            Box::new(StubProvider::load(script).map_err(provider_error)?)
        }
        ChatBackend::Remote => {
            Box::new(RemoteChat::new(remote_config(model, max_concurrency)?).map_err(provider_error)?)
        }
        ChatBackend::Oracle => {
            let policy = match policy {
                Policy::Faithful => OraclePolicy::Faithful,
                Policy::Overconfident => OraclePolicy::Overconfident,
            };
            Box::new(OracleResponder::new(kg.clone(), criteria.clone(), policy))
        }
    })
}

fn prompting_mode(m: Mode) -> PromptingMode {
    match m {
        Mode::Egdr => PromptingMode::Egdr,
        Mode::Direct => PromptingMode::Direct,
        Mode::Cot => PromptingMode::Cot,
    }
}

#[derive(Serialize)]
struct KgSummary {
    entities: usize,
    triplets: usize,
    by_kind: BTreeMap<String, usize>,
    by_relation: BTreeMap<String, usize>,
    criteria: Option<usize>,
}

fn kg_validate(kg_path: &Path, criteria_path: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut manifest = RunManifest::start("kg validate", ConfigSnapshot::default());
    manifest.input(kg_path);
    let kg = load_kg(kg_path)?;
    let criteria = match criteria_path {
        Some(p) => {
            manifest.input(p);
            Some(load_criteria(p, &kg)?.len())
        }
        None => None,
    };
    let mut by_kind = BTreeMap::new();
    for e in kg.entities() {
        *by_kind.entry(kind_name(e.kind).to_string()).or_insert(0) += 1;
    }
    let mut by_relation = BTreeMap::new();
    for t in kg.triplets() {
        *by_relation.entry(t.relation.as_str().to_string()).or_insert(0) += 1;
    }
    let summary =
        KgSummary { entities: kg.entity_count(), triplets: kg.triplets().len(), by_kind, by_relation, criteria };
    println!("ok: {} entities, {} triplets", summary.entities, summary.triplets);
    for (k, n) in &summary.by_kind {
        println!("  {k}: {n}");
    }
    for (r, n) in &summary.by_relation {
        println!("  {r}: {n}");
    }
    if let Some(n) = summary.criteria {
        println!("  criteria entries: {n}");
    }
    if let Some(out) = out {
        write_json(out, &summary)?;
        manifest.counts.processed = 1;
        finish(manifest, out, false)?;
    }
    Ok(())
}

fn kind_name(k: EntityKind) -> &'static str {
    match k {
        EntityKind::Disorder => "disorder",
        EntityKind::Symptom => "symptom",
        EntityKind::Criterion => "criterion",
        EntityKind::Exclusion => "exclusion",
        EntityKind::Specifier => "specifier",
        EntityKind::Modifier => "modifier",
        EntityKind::Root => "root",
    }
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let kg = Arc::new(load_kg(&a.inputs.kg)?);
    let criteria = Arc::new(load_criteria(&a.inputs.criteria, &kg)?);
    let corpus = load_corpus(&a.corpus)?;
    let inner = chat_backend(
        a.provider,
        a.script.as_deref(),
        a.oracle_policy,
        &kg,
        &criteria,
        &a.runtime.model,
        a.runtime.max_concurrency,
    )?;
    let recorder = RecordingProvider::new(inner);
    let provider: &dyn ChatProvider = &recorder;
    let mut manifest = RunManifest::start(
        "diagnose",
        ConfigSnapshot {
            seed: a.runtime.seed,
            template_version: a.runtime.template_version.clone(),
            provider: provider.identity(),
            max_concurrency: a.runtime.max_concurrency,
            ..Default::default()
        },
    );
    for p in [&a.inputs.kg, &a.inputs.criteria, &a.corpus] {
        manifest.input(p);
    }
    let config = EgdrConfig { seed: a.runtime.seed, template_version: a.runtime.template_version.clone() };
    let mode = prompting_mode(a.mode);
    let results = batch(&corpus, a.runtime.max_concurrency, |d| diagnose(d, provider, &kg, &criteria, mode, &config))?;

    let mut hypotheses = Vec::new();
    for (d, r) in corpus.iter().zip(results) {
        match r {
            Ok(h) => hypotheses.push(h),
            Err(dxtrust::egdr::EgdrError::UnknownTemplateVersion(v)) => {
                return Err(CliError::Validation(format!("unknown template version {v:?}")));
            }
            Err(e) => manifest.fail(&d.id, e),
        }
    }
    manifest.counts.processed = hypotheses.len();
    write_jsonl(&a.out, &hypotheses)?;
    if let Some(rec) = &a.record_script {
        write_text(rec, &recorder.to_jsonl())?;
        manifest.outputs.push(rec.clone());
    }
    let failed = manifest.counts.failed;
    println!("diagnosed {} of {} dialogues", hypotheses.len(), corpus.len());
    finish(manifest, &a.out, false)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} dialogue(s) failed; see manifest")));
    }
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let kg = Arc::new(load_kg(&a.inputs.kg)?);
    let criteria = Arc::new(load_criteria(&a.inputs.criteria, &kg)?);
    let mut hypotheses: Vec<DiagnosticHypothesis> = read_jsonl(&a.hypotheses)?;
    hypotheses.sort_by(|x, y| x.dialogue_id.cmp(&y.dialogue_id));
    let config = ScoringConfig {
        alpha: a.alpha,
        lambda: a.lambda,
        retrieval_budget: a.budget,
        seed: a.runtime.seed,
        kas_mean_normalized: a.kas_mean,
        lcs_mode: match a.lcs_mode {
            LcsArg::Rules => LcsMode::Rules,
            LcsArg::Provider => LcsMode::Provider,
        },
        template_version: a.runtime.template_version.clone(),
    };
    config.validate().map_err(|e| invalid("configuration", e))?;

    let chat: Option<Box<dyn ChatProvider>> = match a.provider {
        ScoreBackend::Symbolic => None,
        ScoreBackend::Stub => Some(chat_backend(
            ChatBackend::Stub,
            a.script.as_deref(),
            Policy::Faithful,
            &kg,
            &criteria,
            &a.runtime.model,
            a.runtime.max_concurrency,
        )?),
        ScoreBackend::Remote => Some(Box::new(
            RemoteChat::new(remote_config(&a.runtime.model, a.runtime.max_concurrency)?).map_err(provider_error)?,
        )),
    };
    let embedder: Box<dyn Embedder> = match a.provider {
        ScoreBackend::Remote if std::env::var_os("EMBED_BASE_URL").is_some() => Box::new(
            RemoteEmbedder::new(remote_config(&a.runtime.model, a.runtime.max_concurrency)?, LOCAL_DIMENSION)
                .map_err(provider_error)?,
        ),
        _ => Box::new(LocalEmbedder::default()),
    };
    let providers = ScoringProviders { chat: chat.as_deref(), embedder: embedder.as_ref() };
    let mut manifest = RunManifest::start(
        "score",
        ConfigSnapshot {
            alpha: Some(a.alpha),
            lambda: Some(a.lambda),
            budget: Some(a.budget),
            seed: a.runtime.seed,
            template_version: a.runtime.template_version.clone(),
            provider: chat.as_ref().map_or_else(|| "symbolic".to_string(), |c| c.identity()),
            max_concurrency: a.runtime.max_concurrency,
        },
    );
    for p in [&a.inputs.kg, &a.inputs.criteria, &a.hypotheses] {
        manifest.input(p);
    }
    let results =
        batch(&hypotheses, a.runtime.max_concurrency, |h| score_reasoning(h, &kg, &criteria, &config, providers))?;
    let mut reports: Vec<ConfidenceReport> = Vec::new();
    for (h, r) in hypotheses.iter().zip(results) {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e @ ScoreError::Config(_)) => return Err(invalid("configuration", e)),
            Err(e) => manifest.fail(&h.dialogue_id, format!("{} stage: {e}", e.stage())),
        }
    }
    manifest.counts.processed = reports.len();
    write_jsonl(&a.out, &reports)?;
    let failed = manifest.counts.failed;
    println!("scored {} of {} hypotheses", reports.len(), hypotheses.len());
    finish(manifest, &a.out, false)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} hypothesis(es) failed; see manifest")));
    }
    Ok(())
}

fn cmd_label(a: LabelArgs) -> Result<()> {
    let kg = Arc::new(load_kg(&a.inputs.kg)?);
    let criteria = Arc::new(load_criteria(&a.inputs.criteria, &kg)?);
    let corpus = load_corpus(&a.corpus)?;
    let chat = match a.provider {
        Some(b) => Some(chat_backend(
            b,
            a.script.as_deref(),
            Policy::Faithful,
            &kg,
            &criteria,
            &a.runtime.model,
            a.runtime.max_concurrency,
        )?),
        None => None,
    };
    let mut manifest = RunManifest::start(
        "label",
        ConfigSnapshot {
            seed: a.runtime.seed,
            template_version: a.runtime.template_version.clone(),
            provider: chat.as_ref().map_or_else(|| "rules".to_string(), |c| c.identity()),
            max_concurrency: a.runtime.max_concurrency,
            ..Default::default()
        },
    );
    for p in [&a.inputs.kg, &a.inputs.criteria, &a.corpus] {
        manifest.input(p);
    }
    let config = EgdrConfig { seed: a.runtime.seed, template_version: a.runtime.template_version.clone() };
    let results = batch(&corpus, a.runtime.max_concurrency, |d| -> Result<Dialogue, String> {
        let label = match &chat {
            Some(c) => {
                run_baseline(d, c.as_ref(), &kg, &criteria, PromptingMode::Direct, &config)
                    .map_err(|e| e.to_string())?
                    .final_diagnosis
            }
            None => d.compute_silver(&kg, &criteria).ok_or("no gold annotation to label from")?,
        };
        let mut out = d.clone();
        out.silver_label = Some(label);
        Ok(out)
    })?;
    let mut text = String::new();
    for (d, r) in corpus.iter().zip(results) {
        match r {
            Ok(labelled) => {
                text.push_str(&labelled.to_record());
                text.push('\n');
                manifest.counts.processed += 1;
            }
            Err(e) => manifest.fail(&d.id, e),
        }
    }
    write_text(&a.out, &text)?;
    let failed = manifest.counts.failed;
    println!("labelled {} of {} dialogues", manifest.counts.processed, corpus.len());
    finish(manifest, &a.out, false)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} dialogue(s) could not be labelled; see manifest")));
    }
    Ok(())
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Io(_) => runtime("eval", e),
        _ => invalid("eval", e),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let kg = load_kg(&a.inputs.kg)?;
    let criteria = load_criteria(&a.inputs.criteria, &kg)?;
    let corpus = load_corpus(&a.corpus)?;
    let hypotheses: Vec<DiagnosticHypothesis> = read_jsonl(&a.hypotheses)?;
    let reports: Option<Vec<ConfidenceReport>> = a.scores.as_deref().map(read_jsonl).transpose()?;
    let mut manifest = RunManifest::start("eval", ConfigSnapshot::default());
    for p in [&a.inputs.kg, &a.inputs.criteria, &a.corpus, &a.hypotheses] {
        manifest.input(p);
    }
    if let Some(p) = &a.scores {
        manifest.input(p);
    }
    let (mut records, unmatched) = join_predictions(&hypotheses, reports.as_deref(), &corpus, &kg, &criteria);
    records.sort_by(|x, y| x.dialogue_id.cmp(&y.dialogue_id));
    for id in unmatched {
        manifest.fail(id, "no matching dialogue or reference label");
    }
    check_labels(&records, &declared_labels(&criteria)).map_err(eval_error)?;
    let metrics = compute_metrics(&records).map_err(eval_error)?;
    let input = ReportInput {
        subgroups: Some(subgroup_accuracy(&records).map_err(eval_error)?),
        dcs: match reports {
            Some(_) => Some(dcs_distribution(&records).map_err(eval_error)?),
            None => None,
        },
        metrics: Some(metrics),
        ablation: None,
    };
    manifest.counts.processed = records.len();
    write_json(&a.out, &input)?;
    let m = input.metrics.as_ref().expect("set above");
    println!(
        "n={} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4} (support-weighted)",
        m.total, m.accuracy, m.precision, m.recall, m.f1
    );
    finish(manifest, &a.out, false)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut reports: Vec<ConfidenceReport> = read_jsonl(&a.scores)?;
    reports.sort_by(|x, y| x.dialogue_id.cmp(&y.dialogue_id));
    let mut manifest = RunManifest::start(
        "ablate",
        ConfigSnapshot {
            alpha: Some(a.alpha),
            lambda: Some(a.lambda),
            max_concurrency: a.max_concurrency,
            ..Default::default()
        },
    );
    manifest.input(&a.scores);
    let defaults = SweepDefaults { alpha: a.alpha, lambda: a.lambda, kas_mean_normalized: a.kas_mean };
    let mode = if a.max_concurrency <= 1 { ExecMode::Sequential } else { ExecMode::Parallel };
    let rows: Vec<AblationStats> =
        ablation_sweep(&reports, &a.alpha_grid, &a.lambda_grid, defaults, mode).map_err(eval_error)?;
    manifest.counts.processed = reports.len();
    write_json(&a.out, &rows)?;
    for r in &rows {
        println!("{}={:.2} mean={:.4} sd={:.4}", r.parameter.as_str(), r.value, r.mean, r.std_dev);
    }
    finish(manifest, &a.out, false)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    if a.eval.is_none() && a.ablation.is_none() {
        return Err(CliError::Validation("report needs --eval and/or --ablation".into()));
    }
    let mut manifest = RunManifest::start("report", ConfigSnapshot::default());
    let mut input = match &a.eval {
        Some(p) => {
            manifest.input(p);
            read_json::<ReportInput>(p)?
        }
        None => ReportInput::default(),
    };
    if let Some(p) = &a.ablation {
        manifest.input(p);
        input.ablation = Some(read_json(p)?);
    }
    let formats: BTreeSet<ReportFormat> = a
        .formats
        .iter()
        .map(|f| match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Svg => ReportFormat::Svg,
        })
        .collect();
    let files = emit_report(&input, &a.out, &formats).map_err(eval_error)?;
    manifest.outputs.extend(files.files.iter().map(|f| a.out.join(&f.path)));
    manifest.counts.processed = files.files.len();
    for f in &files.files {
        println!("{} {} bytes", f.path.display(), f.bytes);
    }
    finish(manifest, &a.out, true)
}
