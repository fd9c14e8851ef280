//! Evaluation harness: entity/attribute/knowledge accuracy, BLEU-1, H2
//! rating aggregation with Cohen's kappa, the LLM-judge protocol, and the
//! seeded evaluation-set sampler.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::datagen::DatasetInstance;
use crate::error::{Error, Result};
use crate::gateway::{GenerationBackend, GenerationRequest, Locale, PromptTemplates, StageTag};
use crate::orchestrator::GroundedResponse;
use crate::rng::sample_indices;
use crate::text::{normalize, tokenize};

pub const DEFAULT_EVAL_SAMPLE: usize = 200;

// ---------------------------------------------------------------------------
// Accuracy metrics
// ---------------------------------------------------------------------------

/// Fraction of predictions whose normalized form equals the normalized gold.
pub fn entity_accuracy(preds: &[String], golds: &[String]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("empty prediction list".into()));
    }
    let matches = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize(p) == normalize(g))
        .count();
    Ok(matches as f64 / preds.len() as f64)
}

/// Strict-string variant, reported next to the normalized figure since the
/// match predicate behind published accuracy numbers is ambiguous.
pub fn entity_accuracy_strict(preds: &[String], golds: &[String]) -> Result<f64> {
    if preds.len() != golds.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("invalid input lists".into()));
    }
    let matches = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(matches as f64 / preds.len() as f64)
}

/// Fraction of responses that are grounded AND whose provenance content
/// matches the gold content after normalization. Alignment is positional;
/// ids must agree.
pub fn knowledge_accuracy(
    responses: &[GroundedResponse],
    golds: &[DatasetInstance],
) -> Result<f64> {
    if responses.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} responses vs {} golds",
            responses.len(),
            golds.len()
        )));
    }
    if responses.is_empty() {
        return Err(Error::InvalidArgument("empty response list".into()));
    }
    let mut correct = 0usize;
    for (resp, gold) in responses.iter().zip(golds) {
        if resp.query != gold.question {
            return Err(Error::InvalidArgument(format!(
                "item mismatch: response for {:?} aligned with gold {:?}",
                resp.query, gold.question
            )));
        }
        if resp.grounded {
            if let Some(prov) = &resp.provenance {
                if normalize(&prov.content) == normalize(&gold.content) {
                    correct += 1;
                }
            }
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}

// ---------------------------------------------------------------------------
// BLEU-1
// ---------------------------------------------------------------------------

/// Modified unigram precision with clipped counts times the brevity penalty
/// e^(1 - r/c) when c < r. Uses the repo-wide tokenizer.
pub fn bleu1(candidate: &str, reference: &str) -> Result<f64> {
    let ref_tokens = tokenize(reference);
    if ref_tokens.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let cand_tokens = tokenize(candidate);
    if cand_tokens.is_empty() {
        return Ok(0.0);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &ref_tokens {
        *ref_counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for tok in &cand_tokens {
        *cand_counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(tok, &count)| count.min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / cand_tokens.len() as f64;
    let c = cand_tokens.len() as f64;
    let r = ref_tokens.len() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(precision * bp)
}

// ---------------------------------------------------------------------------
// Cohen's kappa
// ---------------------------------------------------------------------------

/// Chance-corrected inter-rater agreement over categorical labels. Each
/// distinct label is its own category. When chance agreement is 1 (every
/// rating in one identical category), kappa is defined as 1.
pub fn cohen_kappa<T: Eq + std::hash::Hash + Clone>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 rated items".into(),
        ));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut marg_a: HashMap<&T, f64> = HashMap::new();
    let mut marg_b: HashMap<&T, f64> = HashMap::new();
    for x in a {
        *marg_a.entry(x).or_insert(0.0) += 1.0 / n;
    }
    for y in b {
        *marg_b.entry(y).or_insert(0.0) += 1.0 / n;
    }
    let expected: f64 = marg_a
        .iter()
        .map(|(cat, pa)| pa * marg_b.get(cat).copied().unwrap_or(0.0))
        .sum();
    if (expected - 1.0).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

// ---------------------------------------------------------------------------
// H2 ratings
// ---------------------------------------------------------------------------

/// One expert rating of one item on the 1..=3 half-point grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub item_id: String,
    pub helpfulness: f64,
    pub harmlessness: f64,
    /// Optional system label for per-system breakdowns.
    #[serde(default)]
    pub system: Option<String>,
    /// Copied from the evaluated response when the join is available.
    #[serde(default)]
    pub grounded: Option<bool>,
}

fn check_score(value: f64, field: &str) -> Result<()> {
    let on_grid = (value * 2.0).fract() == 0.0;
    if !(1.0..=3.0).contains(&value) || !on_grid {
        return Err(Error::InvalidRating(format!(
            "{field} must be on the 0.5 grid within [1, 3], got {value}"
        )));
    }
    Ok(())
}

/// Validated set of ratings; duplicate (rater, item) pairs are rejected at
/// ingest.
#[derive(Debug, Default, Clone)]
pub struct RatingSet {
    records: Vec<RatingRecord>,
    seen: HashSet<(String, String)>,
}

impl RatingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: RatingRecord) -> Result<()> {
        check_score(record.helpfulness, "helpfulness")?;
        check_score(record.harmlessness, "harmlessness")?;
        let key = (record.rater_id.clone(), record.item_id.clone());
        if !self.seen.insert(key) {
            return Err(Error::InvalidRating(format!(
                "duplicate rating by {} for item {}",
                record.rater_id, record.item_id
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// CSV ingest: header rater_id,item_id,helpfulness,harmlessness with an
    /// optional system column; half-points as decimals.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(ci_rater), Some(ci_item), Some(ci_help), Some(ci_harm)) = (
            col("rater_id"),
            col("item_id"),
            col("helpfulness"),
            col("harmlessness"),
        ) else {
            return Err(Error::InvalidRating(
                "missing required columns rater_id,item_id,helpfulness,harmlessness".into(),
            ));
        };
        let ci_system = col("system");
        let mut set = Self::new();
        for row in rdr.records() {
            let row = row?;
            let parse_f = |i: usize| -> Result<f64> {
                row.get(i)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidRating(e.to_string()))
            };
            set.insert(RatingRecord {
                rater_id: row.get(ci_rater).unwrap_or("").to_string(),
                item_id: row.get(ci_item).unwrap_or("").to_string(),
                helpfulness: parse_f(ci_help)?,
                harmlessness: parse_f(ci_harm)?,
                system: ci_system.and_then(|i| row.get(i)).map(|s| s.to_string()),
                grounded: None,
            })?;
        }
        Ok(set)
    }

    /// Copy the grounded flag from evaluated responses keyed by item id.
    pub fn join_grounded(&mut self, grounded_by_item: &HashMap<String, bool>) {
        for rec in &mut self.records {
            rec.grounded = grounded_by_item.get(&rec.item_id).copied();
        }
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum H2GroupBy {
    System,
    Grounded,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Summary {
    pub group: String,
    pub mean_helpfulness: f64,
    pub mean_harmlessness: f64,
    pub n: usize,
}

/// Arithmetic means of both H2 dimensions, optionally grouped. Group keys
/// are sorted for stable output.
pub fn h2_aggregate(ratings: &RatingSet, group_by: H2GroupBy) -> Vec<H2Summary> {
    let mut groups: BTreeMap<String, Vec<&RatingRecord>> = BTreeMap::new();
    for rec in ratings.records() {
        let key = match group_by {
            H2GroupBy::None => "all".to_string(),
            H2GroupBy::System => rec.system.clone().unwrap_or_else(|| "unknown".into()),
            H2GroupBy::Grounded => match rec.grounded {
                Some(true) => "grounded".into(),
                Some(false) => "ungrounded".into(),
                None => "unknown".into(),
            },
        };
        groups.entry(key).or_default().push(rec);
    }
    groups
        .into_iter()
        .map(|(group, recs)| {
            let n = recs.len();
            H2Summary {
                group,
                mean_helpfulness: recs.iter().map(|r| r.helpfulness).sum::<f64>() / n as f64,
                mean_harmlessness: recs.iter().map(|r| r.harmlessness).sum::<f64>() / n as f64,
                n,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// LLM judge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeCategory {
    Good,
    Moderate,
    Bad,
}

impl JudgeCategory {
    pub fn score(&self) -> u8 {
        match self {
            JudgeCategory::Good => 3,
            JudgeCategory::Moderate => 2,
            JudgeCategory::Bad => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub item_id: String,
    pub category: Option<JudgeCategory>,
    pub score: Option<u8>,
    /// Raw model output, kept for manual triage of unparseable verdicts.
    pub raw: String,
}

fn judge_keywords(locale: Locale) -> [(JudgeCategory, &'static [&'static str]); 3] {
    match locale {
        Locale::En => [
            (JudgeCategory::Good, &["good"] as &[&str]),
            (JudgeCategory::Moderate, &["moderate"]),
            (JudgeCategory::Bad, &["bad"]),
        ],
        Locale::Zh => [
            (JudgeCategory::Good, &["好", "良好"] as &[&str]),
            (JudgeCategory::Moderate, &["中等", "中"]),
            (JudgeCategory::Bad, &["差"]),
        ],
    }
}

/// Parse a judge output: exactly one category keyword must appear.
pub fn parse_judge_output(output: &str, locale: Locale) -> Option<JudgeCategory> {
    let lowered = output.to_lowercase();
    let mut found: Option<JudgeCategory> = None;
    for (category, keywords) in judge_keywords(locale) {
        if keywords.iter().any(|k| lowered.contains(k)) {
            if found.is_some() {
                return None; // ambiguous
            }
            found = Some(category);
        }
    }
    found
}

/// Ask the backend to classify one response as good/moderate/bad.
/// Ambiguous or absent verdicts yield a verdict with no category, flagged
/// for manual triage rather than erroring the run.
pub fn judge(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    item_id: &str,
    question: &str,
    response: &str,
) -> Result<JudgeVerdict> {
    let prompt = templates.render_judge_prompt(question, response)?;
    let raw = backend.generate(&GenerationRequest::new(StageTag::Judge, prompt))?;
    let category = parse_judge_output(&raw, templates.locale);
    Ok(JudgeVerdict {
        item_id: item_id.to_string(),
        category,
        score: category.map(|c| c.score()),
        raw,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub mean_score: f64,
    pub n_scored: usize,
    pub n_unparseable: usize,
}

/// Mean judge score with unparseable verdicts excluded and counted.
pub fn mean_judge_score(verdicts: &[JudgeVerdict]) -> Result<JudgeSummary> {
    let scored: Vec<u8> = verdicts.iter().filter_map(|v| v.score).collect();
    let n_unparseable = verdicts.len() - scored.len();
    if scored.is_empty() {
        return Err(Error::InvalidArgument(
            "no parseable verdicts to average".into(),
        ));
    }
    Ok(JudgeSummary {
        mean_score: scored.iter().map(|&s| s as f64).sum::<f64>() / scored.len() as f64,
        n_scored: scored.len(),
        n_unparseable,
    })
}

// ---------------------------------------------------------------------------
// Evaluation-set sampling
// ---------------------------------------------------------------------------

/// Seeded sample of n items without replacement, same stream discipline as
/// the dataset splitter. Default n is 200.
pub fn sample_eval_set<T: Clone>(test: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > test.len() {
        return Err(Error::InvalidArgument(format!(
            "sample size {n} exceeds test set of {}",
            test.len()
        )));
    }
    Ok(sample_indices(test.len(), n, seed)
        .into_iter()
        .map(|i| test[i].clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Metric report
// ---------------------------------------------------------------------------

/// Audit-ready report bundle; serialized deterministically (BTreeMaps, no
/// timestamps) so replayed runs produce byte-identical documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub seeds: BTreeMap<String, u64>,
    pub backend_kind: Option<String>,
    pub sample_sizes: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, f64>,
    pub h2: Vec<H2Summary>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self {
            schema_version: 1,
            ..Default::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
