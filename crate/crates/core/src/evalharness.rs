//! Classification metrics, confidence distributions, subgroup accuracy and
//! the alpha/lambda sweep, plus report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::claims::{kas_aggregate, kas_aggregate_mean, unit_interval, DomainError};
use crate::confidence::{diagnosis_confidence_score, ConfidenceReport};
use crate::criteria::{CriteriaSet, Diagnosis};
use crate::datasets::{AgeBucket, Dialogue};
use crate::egdr::{DiagnosticHypothesis, PromptingMode};
use crate::exec::ExecMode;
use crate::kgstore::KnowledgeGraph;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records")]
    EmptyInput,
    #[error("records without a confidence score: {}", .0.join(", "))]
    MissingScore(Vec<String>),
    #[error("record {dialogue_id}: label {label:?} is not in the declared label set")]
    UnknownLabel { dialogue_id: String, label: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("report output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_bucket: AgeBucket,
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub predicted: String,
    pub reference: String,
    pub dcs: Option<f64>,
    pub prompting_mode: PromptingMode,
    pub demographics: Demographics,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.reference
    }
}

/// Join hypotheses (and optionally their scores) with the corpus. The
/// reference is the stored silver label, else one computed from gold. Ids
/// with no reference or no dialogue are returned separately.
pub fn join_predictions(
    hypotheses: &[DiagnosticHypothesis],
    reports: Option<&[ConfidenceReport]>,
    corpus: &[Dialogue],
    kg: &KnowledgeGraph,
    criteria: &CriteriaSet,
) -> (Vec<PredictionRecord>, Vec<String>) {
    let by_id: BTreeMap<&str, &Dialogue> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let dcs: BTreeMap<&str, f64> =
        reports.unwrap_or_default().iter().map(|r| (r.dialogue_id.as_str(), r.dcs)).collect();
    let mut records = Vec::new();
    let mut unmatched = Vec::new();
    for h in hypotheses {
        let Some(d) = by_id.get(h.dialogue_id.as_str()) else {
            unmatched.push(h.dialogue_id.clone());
            continue;
        };
        let Some(reference) = d.silver_label.clone().or_else(|| d.compute_silver(kg, criteria)) else {
            unmatched.push(h.dialogue_id.clone());
            continue;
        };
        records.push(PredictionRecord {
            dialogue_id: h.dialogue_id.clone(),
            predicted: h.final_diagnosis.as_label().to_string(),
            reference: reference.as_label().to_string(),
            dcs: dcs.get(h.dialogue_id.as_str()).copied(),
            prompting_mode: h.prompting_mode,
            demographics: Demographics { age_bucket: d.age_bucket(), gender: d.gender.clone() },
        });
    }
    (records, unmatched)
}

/// Every label must belong to `labels`.
pub fn check_labels(records: &[PredictionRecord], labels: &BTreeSet<String>) -> Result<(), EvalError> {
    for r in records {
        for l in [&r.predicted, &r.reference] {
            if !labels.contains(l) {
                return Err(EvalError::UnknownLabel { dialogue_id: r.dialogue_id.clone(), label: l.clone() });
            }
        }
    }
    Ok(())
}

/// Label set of a criteria table: every disorder plus no-diagnosis.
pub fn declared_labels(criteria: &CriteriaSet) -> BTreeSet<String> {
    criteria.iter().map(|c| c.disorder.as_str().to_string()).chain([Diagnosis::NONE_LABEL.to_string()]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[reference][predicted]`
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn build(records: &[PredictionRecord]) -> Self {
        let labels: Vec<String> = records
            .iter()
            .flat_map(|r| [r.reference.clone(), r.predicted.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for r in records {
            counts[index[r.reference.as_str()]][index[r.predicted.as_str()]] += 1;
        }
        Self { labels, counts }
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// No record predicted this class; precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub averaging: String,
    pub total: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Accuracy plus support-weighted precision, recall and F1.
pub fn compute_metrics(records: &[PredictionRecord]) -> Result<Metrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let cm = ConfusionMatrix::build(records);
    let n = cm.labels.len();
    let total = cm.total();
    let mut per_class = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let tp = cm.counts[i][i];
        let support: usize = cm.counts[i].iter().sum();
        let predicted: usize = (0..n).map(|r| cm.counts[r][i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let w = ratio(support, total);
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            label: cm.labels[i].clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
            precision_undefined: predicted == 0,
        });
    }
    Ok(Metrics {
        averaging: "support-weighted".into(),
        total,
        accuracy: ratio(cm.trace(), total),
        precision: wp,
        recall: wr,
        f1: wf,
        per_class,
        confusion: cm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessSummary {
    pub correct: BucketStats,
    pub incorrect: BucketStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DcsDistribution {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Mean of sorted data, so the result does not depend on input order.
fn mean_sorted(sorted: &[f64]) -> Option<f64> {
    (!sorted.is_empty()).then(|| sorted.iter().sum::<f64>() / sorted.len() as f64)
}

pub fn bucket_stats(values: &[f64]) -> BucketStats {
    let s = sorted(values);
    BucketStats {
        count: s.len(),
        mean: mean_sorted(&s),
        median: quantile(&s, 0.5),
        q25: quantile(&s, 0.25),
        q75: quantile(&s, 0.75),
    }
}

pub fn dcs_distribution(records: &[PredictionRecord]) -> Result<DcsDistribution, EvalError> {
    let missing: Vec<String> = records.iter().filter(|r| r.dcs.is_none()).map(|r| r.dialogue_id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingScore(missing));
    }
    let mut out = DcsDistribution::default();
    for r in records {
        let v = r.dcs.expect("checked");
        if r.correct() {
            out.correct.push(v);
        } else {
            out.incorrect.push(v);
        }
    }
    out.correct = sorted(&out.correct);
    out.incorrect = sorted(&out.incorrect);
    Ok(out)
}

pub fn dcs_by_correctness(records: &[PredictionRecord]) -> Result<CorrectnessSummary, EvalError> {
    let d = dcs_distribution(records)?;
    Ok(CorrectnessSummary { correct: bucket_stats(&d.correct), incorrect: bucket_stats(&d.incorrect) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub dimension: String,
    pub group: String,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Accuracy per age bucket, then per gender; empty groups are omitted and
/// absent demographics form an `unknown` row.
pub fn subgroup_accuracy(records: &[PredictionRecord]) -> Result<Vec<SubgroupRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut age: BTreeMap<AgeBucket, (usize, usize)> = BTreeMap::new();
    let mut gender: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let hit = usize::from(r.correct());
        let a = age.entry(r.demographics.age_bucket).or_default();
        a.0 += 1;
        a.1 += hit;
        let g = gender.entry(r.demographics.gender.clone().unwrap_or_else(|| "unknown".into())).or_default();
        g.0 += 1;
        g.1 += hit;
    }
    let row = |dimension: &str, group: String, (count, correct): (usize, usize)| SubgroupRow {
        dimension: dimension.into(),
        group,
        count,
        correct,
        accuracy: ratio(correct, count),
    };
    let mut rows: Vec<SubgroupRow> = age.into_iter().map(|(b, c)| row("age", b.label().to_string(), c)).collect();
    // unknown gender last, like the unknown age bucket
    let unknown = gender.remove("unknown");
    rows.extend(gender.into_iter().map(|(g, c)| row("gender", g, c)));
    rows.extend(unknown.map(|c| row("gender", "unknown".into(), c)));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Alpha,
    Lambda,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationStats {
    pub parameter: SweepParameter,
    pub value: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepDefaults {
    pub alpha: f64,
    pub lambda: f64,
    pub kas_mean_normalized: bool,
}

impl Default for SweepDefaults {
    fn default() -> Self {
        Self { alpha: 0.5, lambda: 0.75, kas_mean_normalized: false }
    }
}

fn summarize(parameter: SweepParameter, value: f64, values: &[f64]) -> AblationStats {
    let s = sorted(values);
    let n = s.len();
    let mean = mean_sorted(&s).expect("non-empty");
    let std_dev = if n < 2 { 0.0 } else { (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    AblationStats {
        parameter,
        value,
        mean,
        std_dev,
        min: s[0],
        q25: quantile(&s, 0.25).expect("non-empty"),
        median: quantile(&s, 0.5).expect("non-empty"),
        q75: quantile(&s, 0.75).expect("non-empty"),
        max: s[n - 1],
    }
}

fn kas_at(report: &ConfidenceReport, alpha: f64, mean_normalized: bool) -> Result<f64, DomainError> {
    let w = report.claims.iter().map(|c| c.reweighted(alpha)).collect::<Result<Vec<_>, _>>()?;
    Ok(if mean_normalized { kas_aggregate_mean(&w) } else { kas_aggregate(&w) })
}

/// DCS distribution per grid point, recomputed from stored claim components
/// (labels held fixed). Alpha rows use the default lambda; lambda rows use
/// KAS at the default alpha.
pub fn ablation_sweep(
    corpus: &[ConfidenceReport],
    alpha_grid: &[f64],
    lambda_grid: &[f64],
    defaults: SweepDefaults,
    mode: ExecMode,
) -> Result<Vec<AblationStats>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for &a in alpha_grid {
        unit_interval("alpha", a)?;
    }
    for &l in lambda_grid {
        unit_interval("lambda", l)?;
    }
    unit_interval("alpha", defaults.alpha)?;
    unit_interval("lambda", defaults.lambda)?;

    let points: Vec<(SweepParameter, f64)> = alpha_grid
        .iter()
        .map(|&a| (SweepParameter::Alpha, a))
        .chain(lambda_grid.iter().map(|&l| (SweepParameter::Lambda, l)))
        .collect();
    let base_kas: Vec<f64> =
        corpus.iter().map(|r| kas_at(r, defaults.alpha, defaults.kas_mean_normalized)).collect::<Result<_, _>>()?;
    let rows = mode.map(&points, |&(param, value)| -> Result<AblationStats, DomainError> {
        let dcs = corpus
            .iter()
            .zip(&base_kas)
            .map(|(r, &kas)| match param {
                SweepParameter::Alpha => {
                    diagnosis_confidence_score(kas_at(r, value, defaults.kas_mean_normalized)?, r.lcs, defaults.lambda)
                }
                SweepParameter::Lambda => diagnosis_confidence_score(kas, r.lcs, value),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(summarize(param, value, &dcs))
    });
    Ok(rows.into_iter().collect::<Result<_, _>>()?)
}

/// Everything a report may contain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    pub metrics: Option<Metrics>,
    pub subgroups: Option<Vec<SubgroupRow>>,
    pub dcs: Option<DcsDistribution>,
    pub ablation: Option<Vec<AblationStats>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: ReportFormat,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub files: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    notes: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<&'a Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subgroups: Option<&'a Vec<SubgroupRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dcs_by_correctness: Option<CorrectnessSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablation: Option<&'a Vec<AblationStats>>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn metrics_csv(m: &Metrics) -> String {
    let mut s =
        String::from("# averaging: support-weighted; precision_undefined=true means no predictions (reported as 0)\n");
    s.push_str("label,precision,recall,f1,support,predicted,precision_undefined\n");
    for c in &m.per_class {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{},{},{}",
            c.label, c.precision, c.recall, c.f1, c.support, c.predicted, c.precision_undefined
        );
    }
    let _ = writeln!(s, "weighted,{:.6},{:.6},{:.6},{},{},false", m.precision, m.recall, m.f1, m.total, m.total);
    let _ = writeln!(s, "accuracy,{:.6},,,{},,", m.accuracy, m.total);
    s
}

fn subgroups_csv(rows: &[SubgroupRow]) -> String {
    let mut s = String::from("dimension,group,count,correct,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.6}", r.dimension, r.group, r.count, r.correct, r.accuracy);
    }
    s
}

fn dcs_csv(c: &CorrectnessSummary) -> String {
    let mut s = String::from("bucket,count,mean,median,q25,q75\n");
    for (name, b) in [("correct", &c.correct), ("incorrect", &c.incorrect)] {
        let _ = writeln!(s, "{name},{},{},{},{},{}", b.count, opt(b.mean), opt(b.median), opt(b.q25), opt(b.q75));
    }
    s
}

fn ablation_csv(rows: &[AblationStats]) -> String {
    let mut s = String::from("# attribution labels held fixed; only TMS/KAS/DCS recomputed\n");
    s.push_str("parameter,value,mean,std_dev,min,q25,median,q75,max\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.parameter.as_str(),
            r.value,
            r.mean,
            r.std_dev,
            r.min,
            r.q25,
            r.median,
            r.q75,
            r.max
        );
    }
    s
}

pub const HISTOGRAM_BINS: usize = 20;

/// Bin counts over [0, 1]; 1.0 lands in the last bin.
pub fn histogram(values: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for v in values {
        let i = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1;
    }
    bins
}

pub fn histogram_svg(title: &str, values: &[f64]) -> String {
    let bins = histogram(values);
    let (w, h, pad) = (420.0, 260.0, 30.0);
    let plot_w = w - 2.0 * pad;
    let plot_h = h - 2.0 * pad;
    let peak = bins.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / HISTOGRAM_BINS as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="18" font-family="sans-serif" font-size="13">{title} (n={})</text>"#,
        values.len()
    );
    for (i, &c) in bins.iter().enumerate() {
        let bh = plot_h * c as f64 / peak;
        let x = pad + i as f64 * bar_w;
        let y = pad + plot_h - bh;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{bh:.2}" fill="#4a78b0"><title>[{:.2},{:.2}): {c}</title></rect>"##,
            bar_w - 1.0,
            i as f64 / HISTOGRAM_BINS as f64,
            (i + 1) as f64 / HISTOGRAM_BINS as f64
        );
    }
    let base = pad + plot_h;
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, pad + plot_w);
    for tick in 0..=4 {
        let x = pad + plot_w * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.2}</text>"#,
            base + 14.0,
            tick as f64 / 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(
    dir: &Path,
    name: &str,
    format: ReportFormat,
    content: &str,
    manifest: &mut FileManifest,
) -> Result<(), EvalError> {
    std::fs::write(dir.join(name), content)?;
    manifest.files.push(ManifestEntry {
        path: PathBuf::from(name),
        format,
        bytes: content.len(),
        sha256: hex::encode(Sha256::digest(content.as_bytes())),
    });
    Ok(())
}

/// Write the requested formats into `out_dir`. Output bytes depend only on
/// `results`.
pub fn emit_report(
    results: &ReportInput,
    out_dir: &Path,
    formats: &BTreeSet<ReportFormat>,
) -> Result<FileManifest, EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = FileManifest::default();
    let summary = results
        .dcs
        .as_ref()
        .map(|d| CorrectnessSummary { correct: bucket_stats(&d.correct), incorrect: bucket_stats(&d.incorrect) });

    if formats.contains(&ReportFormat::Json) {
        let mut notes = vec!["precision, recall and f1 are support-weighted over classes"];
        if results.metrics.as_ref().is_some_and(|m| m.per_class.iter().any(|c| c.precision_undefined)) {
            notes.push("classes with zero predictions report precision 0 (precision_undefined=true)");
        }
        if results.ablation.is_some() {
            notes.push("ablation holds attribution labels fixed and recomputes TMS, KAS and DCS only");
        }
        let report = JsonReport {
            notes,
            metrics: results.metrics.as_ref(),
            subgroups: results.subgroups.as_ref(),
            dcs_by_correctness: summary.clone(),
            ablation: results.ablation.as_ref(),
        };
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        write_file(out_dir, "report.json", ReportFormat::Json, &text, &mut manifest)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        if let Some(m) = &results.metrics {
            write_file(out_dir, "metrics.csv", ReportFormat::Csv, &metrics_csv(m), &mut manifest)?;
        }
        if let Some(rows) = &results.subgroups {
            write_file(out_dir, "subgroups.csv", ReportFormat::Csv, &subgroups_csv(rows), &mut manifest)?;
        }
        if let Some(c) = &summary {
            write_file(out_dir, "dcs_by_correctness.csv", ReportFormat::Csv, &dcs_csv(c), &mut manifest)?;
        }
        if let Some(rows) = &results.ablation {
            write_file(out_dir, "ablation.csv", ReportFormat::Csv, &ablation_csv(rows), &mut manifest)?;
        }
    }
    if formats.contains(&ReportFormat::Svg) {
        if let Some(d) = &results.dcs {
            write_file(
                out_dir,
                "dcs_correct.svg",
                ReportFormat::Svg,
                &histogram_svg("DCS, correct", &d.correct),
                &mut manifest,
            )?;
            write_file(
                out_dir,
                "dcs_incorrect.svg",
                ReportFormat::Svg,
                &histogram_svg("DCS, incorrect", &d.incorrect),
                &mut manifest,
            )?;
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), Some(2.5));
        assert_eq!(quantile(&s, 0.25), Some(1.75));
        assert_eq!(quantile(&s, 0.0), Some(1.0));
        assert_eq!(quantile(&s, 1.0), Some(4.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn histogram_edges() {
        let b = histogram(&[0.0, 0.049, 0.05, 0.999, 1.0]);
        assert_eq!(b[0], 2);
        assert_eq!(b[1], 1);
        assert_eq!(b[19], 2);
        assert_eq!(b.iter().sum::<usize>(), 5);
    }
}
