//! Knowledge-guided dataset construction: QA generation from triples,
//! model self-assessment, deterministic 7:1:2 splitting, training-record
//! emission for the four loss components, and the few-shot / unseen-entity
//! experiment subset generators.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{GenerationBackend, GenerationRequest, PromptTemplates, StageTag};
use crate::kb::{KnowledgeBase, KnowledgeInstance};
use crate::rng::{sample_indices, shuffle};
use crate::text::normalize;

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);
pub const MIN_SPLIT_SIZE: usize = 10;
pub const DEFAULT_FEW_SHOT_SIZES: [usize; 8] = [100, 200, 300, 400, 500, 600, 700, 800];
/// Entity fractions for the unseen-entity generalization protocol; the
/// endpoints 0.05% and 60% bound the sweep, the interior is a default grid.
pub const DEFAULT_UNSEEN_FRACTIONS: [f64; 8] =
    [0.0005, 0.001, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceFlag {
    ChatgptFlagged,
    ExpertVerified,
}

/// One dataset tuple (entity, attribute, content, question, answer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub entity: String,
    pub attribute: String,
    pub content: String,
    pub question: String,
    pub answer: String,
    pub id: usize,
    #[serde(default)]
    pub flags: BTreeSet<InstanceFlag>,
}

impl DatasetInstance {
    /// An instance is only emittable when its triple exists verbatim in the
    /// source KB and its QA pair is non-empty.
    pub fn validate_against_kb(&self, kb: &KnowledgeBase) -> Result<()> {
        match kb.lookup(&self.entity, &self.attribute) {
            Some(content) if content == self.content => {}
            Some(_) => {
                return Err(Error::InvalidArgument(format!(
                    "instance {}: content differs from KB content for ({}, {})",
                    self.id, self.entity, self.attribute
                )))
            }
            None => {
                return Err(Error::InvalidArgument(format!(
                    "instance {}: pair ({}, {}) not in KB",
                    self.id, self.entity, self.attribute
                )))
            }
        }
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "instance {}: empty question or answer",
                self.id
            )));
        }
        Ok(())
    }
}

/// The four loss components realized as training-record kinds: three
/// knowledge-tuning terms (entity, attribute, knowledge-grounded response)
/// plus the instruction-tuning term (plain response).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossComponent {
    Entity,
    Attribute,
    ResponseK,
    ResponsePlain,
}

impl LossComponent {
    pub fn is_knowledge_tuning(&self) -> bool {
        !matches!(self, LossComponent::ResponsePlain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub loss_component: LossComponent,
    pub prompt: String,
    pub target: String,
    pub source_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ratios: DEFAULT_SPLIT_RATIOS,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidArgument("split ratios must be positive".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// QA generation and self-assessment
// ---------------------------------------------------------------------------

/// Parse a generated QA blob: the first question-mark-terminated segment is
/// the question, the remainder is the answer. `Q:`/`A:` style labels are
/// stripped.
pub fn parse_qa(output: &str) -> Result<(String, String)> {
    let trimmed = output.trim();
    let qpos = trimmed
        .char_indices()
        .find(|(_, c)| *c == '?' || *c == '？')
        .map(|(i, c)| i + c.len_utf8());
    let Some(end) = qpos else {
        return Err(Error::Unparseable(
            "output lacks a question/answer boundary".into(),
        ));
    };
    let question = strip_label(trimmed[..end].trim(), &["Q:", "Question:", "问：", "问题："]);
    let answer = strip_label(trimmed[end..].trim(), &["A:", "Answer:", "答：", "回答："]);
    if question.is_empty() || answer.is_empty() {
        return Err(Error::Unparseable("empty question or answer".into()));
    }
    Ok((question, answer))
}

fn strip_label(text: &str, labels: &[&str]) -> String {
    for label in labels {
        if let Some(rest) = text.strip_prefix(label) {
            return rest.trim().to_string();
        }
    }
    text.to_string()
}

/// Generate one (question, answer) pair for a knowledge triple.
pub fn generate_qa(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    inst: &KnowledgeInstance,
) -> Result<(String, String)> {
    let prompt = templates.render_datagen_prompt(inst)?;
    let output = backend
        .generate(&GenerationRequest::new(StageTag::Datagen, prompt))
        .map_err(|e| match e {
            Error::Backend { message, .. } => Error::Backend {
                stage: "datagen".into(),
                message,
            },
            other => other,
        })?;
    parse_qa(&output)
}

/// Ask the backend whether the instance's answer is faithful to the
/// knowledge content. A "no" or unparseable verdict flags the instance;
/// nothing is ever dropped here, expert review is the second gate.
pub fn self_assess(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    inst: &mut DatasetInstance,
) -> Result<()> {
    let kinst = KnowledgeInstance {
        entity: inst.entity.clone(),
        attribute: inst.attribute.clone(),
        content: inst.content.clone(),
        id: inst.id,
    };
    let prompt = templates.render_assess_prompt(&kinst, &inst.question, &inst.answer)?;
    let verdict = backend.generate(&GenerationRequest::new(StageTag::Judge, prompt))?;
    let word = verdict
        .trim()
        .to_lowercase()
        .trim_end_matches(['.', '!', '。'])
        .to_string();
    let keep = matches!(word.as_str(), "yes" | "是");
    if !keep {
        inst.flags.insert(InstanceFlag::ChatgptFlagged);
    }
    Ok(())
}

/// A generation that could not become a dataset instance: (KB instance id,
/// reason).
pub type GenerationFailure = (usize, String);

/// Build a dataset from every instance of a KB: generate `repeat` QA pairs
/// per triple, self-assess each, and validate against the KB. Unparseable
/// generations are returned as (instance id, reason) failures alongside the
/// dataset rather than aborting the run.
pub fn generate_dataset(
    backend: &dyn GenerationBackend,
    templates: &PromptTemplates,
    kb: &KnowledgeBase,
    repeat: usize,
) -> Result<(Vec<DatasetInstance>, Vec<GenerationFailure>)> {
    let repeat = repeat.max(1);
    let mut dataset = Vec::new();
    let mut failures = Vec::new();
    let mut next_id = 0usize;
    for inst in kb.instances() {
        for _ in 0..repeat {
            match generate_qa(backend, templates, inst) {
                Ok((question, answer)) => {
                    let mut di = DatasetInstance {
                        entity: inst.entity.clone(),
                        attribute: inst.attribute.clone(),
                        content: inst.content.clone(),
                        question,
                        answer,
                        id: next_id,
                        flags: BTreeSet::new(),
                    };
                    self_assess(backend, templates, &mut di)?;
                    di.validate_against_kb(kb)?;
                    dataset.push(di);
                    next_id += 1;
                }
                Err(Error::Unparseable(msg)) => failures.push((inst.id, msg)),
                Err(other) => return Err(other),
            }
        }
    }
    Ok((dataset, failures))
}

// ---------------------------------------------------------------------------
// Splitting and projections
// ---------------------------------------------------------------------------

/// Deterministic Fisher-Yates shuffle (SplitMix64) then cumulative-floor
/// cuts: train gets floor(r1*N), valid gets floor((r1+r2)*N) - floor(r1*N),
/// test the remainder. For N=7449 at 7:1:2 this is (5214, 745, 1490).
pub fn split(
    dataset: &[DatasetInstance],
    spec: &SplitSpec,
) -> Result<(Vec<DatasetInstance>, Vec<DatasetInstance>, Vec<DatasetInstance>)> {
    spec.validate()?;
    let n = dataset.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "dataset too small to split: {n} < {MIN_SPLIT_SIZE}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, spec.seed);
    let (r1, r2, _) = spec.ratios;
    // the epsilon absorbs float error in the cumulative ratio (0.7 + 0.1
    // is just below 0.8 in binary) so exact products floor correctly
    let cut = |ratio: f64| ((ratio * n as f64) + 1e-9).floor() as usize;
    let cut1 = cut(r1);
    let cut2 = cut(r1 + r2);
    let pick = |range: std::ops::Range<usize>| -> Vec<DatasetInstance> {
        order[range].iter().map(|&i| dataset[i].clone()).collect()
    };
    Ok((pick(0..cut1), pick(cut1..cut2), pick(cut2..n)))
}

/// The (question, answer) projection used for the instruction-tuning term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: usize,
    pub question: String,
    pub answer: String,
}

pub fn derive_dstar(dataset: &[DatasetInstance]) -> Vec<QaPair> {
    dataset
        .iter()
        .map(|inst| QaPair {
            id: inst.id,
            question: inst.question.clone(),
            answer: inst.answer.clone(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Training-record emission
// ---------------------------------------------------------------------------

/// Emit the four training records realizing the loss decomposition: three
/// knowledge-tuning records (entity, attribute, knowledge-grounded response)
/// and one instruction-tuning record (plain response).
pub fn emit_training_records(
    inst: &DatasetInstance,
    templates: &PromptTemplates,
) -> Result<[TrainingRecord; 4]> {
    let entity = TrainingRecord {
        loss_component: LossComponent::Entity,
        prompt: templates.render_entity_prompt(&inst.question)?,
        target: inst.entity.clone(),
        source_id: inst.id,
    };
    let attribute = TrainingRecord {
        loss_component: LossComponent::Attribute,
        prompt: templates.render_attr_prompt(&inst.question, &inst.entity, None)?,
        target: inst.attribute.clone(),
        source_id: inst.id,
    };
    let response_k = TrainingRecord {
        loss_component: LossComponent::ResponseK,
        prompt: templates.render_rk_prompt(&inst.question, &inst.content)?,
        target: inst.answer.clone(),
        source_id: inst.id,
    };
    let response_plain = TrainingRecord {
        loss_component: LossComponent::ResponsePlain,
        prompt: templates.render_plain_prompt(&inst.question)?,
        target: inst.answer.clone(),
        source_id: inst.id,
    };
    Ok([entity, attribute, response_k, response_plain])
}

/// LoRA-style hyperparameters for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: u32,
    pub max_epoch: u32,
    pub learning_rate: f64,
    pub adapter_rank: u32,
    pub adapter_alpha: u32,
    pub adapter_dropout: f64,
    pub target_modules: Vec<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epoch: 10,
            learning_rate: 5e-4,
            adapter_rank: 8,
            adapter_alpha: 16,
            adapter_dropout: 0.05,
            target_modules: vec!["q_proj".into(), "v_proj".into()],
        }
    }
}

impl TrainingConfig {
    /// Flat `key = value` document, parseable by [`TrainingConfig::parse`].
    pub fn emit(&self) -> String {
        format!(
            "batch_size = {}\nmax_epoch = {}\nlearning_rate = {}\nadapter_rank = {}\nadapter_alpha = {}\nadapter_dropout = {}\ntarget_modules = {}\n",
            self.batch_size,
            self.max_epoch,
            self.learning_rate,
            self.adapter_rank,
            self.adapter_alpha,
            self.adapter_dropout,
            self.target_modules.join(",")
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line0, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line0 + 1,
                message: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err = |msg: String| Error::Parse {
                line: line0 + 1,
                message: msg,
            };
            match key {
                "batch_size" => cfg.batch_size = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "max_epoch" => cfg.max_epoch = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "adapter_rank" => cfg.adapter_rank = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "adapter_alpha" => cfg.adapter_alpha = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "adapter_dropout" => cfg.adapter_dropout = value.parse().map_err(|e| parse_err(format!("{e}")))?,
                "target_modules" => {
                    cfg.target_modules = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Experiment subset generators
// ---------------------------------------------------------------------------

/// Nested subsets of the pool drawn by one seeded shuffle: each subset is a
/// prefix of the shuffled pool, so larger subsets contain smaller ones.
pub fn few_shot_subsets(
    pool: &[DatasetInstance],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<Vec<DatasetInstance>>> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    if max > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {max} exceeds pool of {}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    shuffle(&mut order, seed);
    Ok(sizes
        .iter()
        .map(|&size| order[..size].iter().map(|&i| pool[i].clone()).collect())
        .collect())
}

/// One unseen-entity training split: the instances whose entity falls in a
/// seeded sample of distinct entities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnseenEntitySplit {
    pub fraction: f64,
    pub entity_count: usize,
    pub training: Vec<DatasetInstance>,
}

/// Unseen-entity generalization protocol: the test set is the entire
/// dataset (constant across fractions); for each fraction f, the training
/// set contains every instance whose entity belongs to a seeded sample of
/// ceil(f * E) distinct entities. Entity samples are nested across
/// fractions for one seed.
pub fn unseen_entity_splits(
    dataset: &[DatasetInstance],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<UnseenEntitySplit>> {
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fraction {f} outside (0, 1]"
            )));
        }
    }
    // distinct entities in normalized form, sorted for determinism
    let mut entities: Vec<String> = dataset
        .iter()
        .map(|i| normalize(&i.entity))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    shuffle(&mut entities, seed);
    let total = entities.len();
    let mut splits = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let count = ((fraction * total as f64).ceil() as usize).min(total).max(1);
        let sampled: BTreeSet<&str> = entities[..count].iter().map(String::as_str).collect();
        let training: Vec<DatasetInstance> = dataset
            .iter()
            .filter(|i| sampled.contains(normalize(&i.entity).as_str()))
            .cloned()
            .collect();
        splits.push(UnseenEntitySplit {
            fraction,
            entity_count: count,
            training,
        });
    }
    Ok(splits)
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

pub fn write_dataset_jsonl<W: Write>(dataset: &[DatasetInstance], mut writer: W) -> Result<()> {
    for inst in dataset {
        serde_json::to_writer(&mut writer, inst)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset_jsonl<R: Read>(reader: R) -> Result<Vec<DatasetInstance>> {
    let mut out = Vec::new();
    for (line0, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: DatasetInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line0 + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_training_records_jsonl<W: Write>(
    records: &[TrainingRecord],
    mut writer: W,
) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded sample of n dataset instances without replacement; shares the
/// stream discipline of [`split`].
pub fn sample_instances(
    dataset: &[DatasetInstance],
    n: usize,
    seed: u64,
) -> Result<Vec<DatasetInstance>> {
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "sample size {n} exceeds dataset of {}",
            dataset.len()
        )));
    }
    Ok(sample_indices(dataset.len(), n, seed)
        .into_iter()
        .map(|i| dataset[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;

    fn synthetic_dataset(n: usize, entities: usize) -> Vec<DatasetInstance> {
        (0..n)
            .map(|i| DatasetInstance {
                entity: format!("entity{}", i % entities),
                attribute: format!("attr{}", i),
                content: format!("content {i}"),
                question: format!("question {i}?"),
                answer: format!("answer {i}"),
                id: i,
                flags: BTreeSet::new(),
            })
            .collect()
    }

    #[test]
    fn parse_qa_labeled() {
        let (q, a) =
            parse_qa("Q: What are common adverse reactions? A: Restlessness, nausea.").unwrap();
        assert_eq!(q, "What are common adverse reactions?");
        assert_eq!(a, "Restlessness, nausea.");
    }

    #[test]
    fn parse_qa_cjk_question_mark() {
        let (q, a) = parse_qa("胃癌有哪些症状？早期多无明显症状。").unwrap();
        assert_eq!(q, "胃癌有哪些症状？");
        assert_eq!(a, "早期多无明显症状。");
    }

    #[test]
    fn parse_qa_without_question_mark_fails() {
        assert!(matches!(
            parse_qa("no question here at all"),
            Err(Error::Unparseable(_))
        ));
    }

    #[test]
    fn parse_qa_empty_answer_fails() {
        assert!(parse_qa("Only a question?").is_err());
    }

    #[test]
    fn generate_qa_through_scripted_backend() {
        let kb = KnowledgeBase::build(
            vec![("e".into(), "a".into(), "some content".into())],
            "t",
        )
        .unwrap();
        let templates = PromptTemplates::default_en();
        let inst = &kb.instances()[0];
        let prompt = templates.render_datagen_prompt(inst).unwrap();
        let backend = ScriptedBackend::new().with(prompt, "Q: What about e? A: Something.");
        let (q, a) = generate_qa(&backend, &templates, inst).unwrap();
        assert_eq!(q, "What about e?");
        assert_eq!(a, "Something.");
    }

    #[test]
    fn self_assess_yes_keeps_no_flags() {
        let templates = PromptTemplates::default_en();
        let mut inst = synthetic_dataset(1, 1).remove(0);
        let kinst = KnowledgeInstance {
            entity: inst.entity.clone(),
            attribute: inst.attribute.clone(),
            content: inst.content.clone(),
            id: inst.id,
        };
        let prompt = templates
            .render_assess_prompt(&kinst, &inst.question, &inst.answer)
            .unwrap();
        let yes = ScriptedBackend::new().with(prompt.clone(), "yes");
        self_assess(&yes, &templates, &mut inst).unwrap();
        assert!(inst.flags.is_empty());

        let no = ScriptedBackend::new().with(prompt.clone(), "No.");
        self_assess(&no, &templates, &mut inst).unwrap();
        assert!(inst.flags.contains(&InstanceFlag::ChatgptFlagged));

        let mut inst2 = synthetic_dataset(1, 1).remove(0);
        let gibberish = ScriptedBackend::new().with(prompt, "perhaps, who knows");
        self_assess(&gibberish, &templates, &mut inst2).unwrap();
        assert!(inst2.flags.contains(&InstanceFlag::ChatgptFlagged));
    }

    #[test]
    fn split_sizes_at_paper_scale() {
        let dataset = synthetic_dataset(7449, 100);
        let (train, valid, test) = split(&dataset, &SplitSpec::new(1)).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (5214, 745, 1490));
    }

    #[test]
    fn split_sizes_exact_ratio() {
        let dataset = synthetic_dataset(10, 3);
        let (train, valid, test) = split(&dataset, &SplitSpec::new(1)).unwrap();
        assert_eq!((train.len(), valid.len(), test.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_a_partition() {
        let dataset = synthetic_dataset(101, 7);
        let (train, valid, test) = split(&dataset, &SplitSpec::new(9)).unwrap();
        let mut ids: Vec<usize> = train
            .iter()
            .chain(&valid)
            .chain(&test)
            .map(|i| i.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn split_seed_reproducible() {
        let dataset = synthetic_dataset(100, 5);
        let (t1, v1, s1) = split(&dataset, &SplitSpec::new(5)).unwrap();
        let (t2, v2, s2) = split(&dataset, &SplitSpec::new(5)).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert_eq!(s1, s2);
        let (t3, _, _) = split(&dataset, &SplitSpec::new(6)).unwrap();
        assert_eq!(t3.len(), t1.len());
        assert_ne!(t3, t1);
    }

    #[test]
    fn split_too_small_rejected() {
        let dataset = synthetic_dataset(9, 2);
        assert!(split(&dataset, &SplitSpec::new(1)).is_err());
    }

    #[test]
    fn dstar_projects_q_and_r_only() {
        let dataset = synthetic_dataset(5, 2);
        let dstar = derive_dstar(&dataset);
        assert_eq!(dstar.len(), 5);
        for (inst, pair) in dataset.iter().zip(&dstar) {
            assert_eq!(pair.id, inst.id);
            assert_eq!(pair.question, inst.question);
            assert_eq!(pair.answer, inst.answer);
        }
        assert!(derive_dstar(&[]).is_empty());
        // serialized record carries only id/question/answer
        let json = serde_json::to_value(&dstar[0]).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(keys.len(), 3);
        assert!(!json.as_object().unwrap().contains_key("entity"));
    }

    #[test]
    fn training_records_wiring() {
        let templates = PromptTemplates::default_en();
        let inst = synthetic_dataset(1, 1).remove(0);
        let records = emit_training_records(&inst, &templates).unwrap();
        assert_eq!(
            records.iter().filter(|r| r.loss_component.is_knowledge_tuning()).count(),
            3
        );
        let entity = records.iter().find(|r| r.loss_component == LossComponent::Entity).unwrap();
        assert_eq!(entity.target, inst.entity);
        let rk = records.iter().find(|r| r.loss_component == LossComponent::ResponseK).unwrap();
        assert!(rk.prompt.contains(&inst.content));
        assert_eq!(rk.target, inst.answer);
        let plain = records
            .iter()
            .find(|r| r.loss_component == LossComponent::ResponsePlain)
            .unwrap();
        assert!(!plain.prompt.contains(&inst.content));
        assert_eq!(plain.target, inst.answer);
    }

    #[test]
    fn training_config_round_trip() {
        let cfg = TrainingConfig::default();
        let text = cfg.emit();
        let parsed = TrainingConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.learning_rate, 5e-4);
        assert_eq!(parsed.adapter_rank, 8);
        assert_eq!(parsed.batch_size, 128);
        assert_eq!(parsed.max_epoch, 10);
        assert_eq!(parsed.adapter_alpha, 16);
        assert_eq!(parsed.adapter_dropout, 0.05);
        assert_eq!(parsed.target_modules, vec!["q_proj", "v_proj"]);
    }

    #[test]
    fn few_shot_subsets_are_nested() {
        let pool = synthetic_dataset(1000, 30);
        let subsets = few_shot_subsets(&pool, &DEFAULT_FEW_SHOT_SIZES, 17).unwrap();
        assert_eq!(subsets.len(), 8);
        for w in subsets.windows(2) {
            let small: BTreeSet<usize> = w[0].iter().map(|i| i.id).collect();
            let large: BTreeSet<usize> = w[1].iter().map(|i| i.id).collect();
            assert!(small.is_subset(&large));
        }
        let again = few_shot_subsets(&pool, &DEFAULT_FEW_SHOT_SIZES, 17).unwrap();
        assert_eq!(subsets, again);
    }

    #[test]
    fn few_shot_size_exceeding_pool_rejected() {
        let pool = synthetic_dataset(50, 5);
        assert!(few_shot_subsets(&pool, &[100], 1).is_err());
    }

    #[test]
    fn unseen_entity_splits_nest_and_cover() {
        let dataset = synthetic_dataset(500, 40);
        let splits = unseen_entity_splits(&dataset, &DEFAULT_UNSEEN_FRACTIONS, 3).unwrap();
        assert_eq!(splits.len(), 8);
        for w in splits.windows(2) {
            let small: BTreeSet<String> =
                w[0].training.iter().map(|i| normalize(&i.entity)).collect();
            let large: BTreeSet<String> =
                w[1].training.iter().map(|i| normalize(&i.entity)).collect();
            assert!(small.is_subset(&large));
        }
        let full = unseen_entity_splits(&dataset, &[1.0], 3).unwrap();
        assert_eq!(full[0].entity_count, 40);
        assert_eq!(full[0].training.len(), dataset.len());
    }

    #[test]
    fn unseen_fraction_out_of_range_rejected() {
        let dataset = synthetic_dataset(20, 4);
        assert!(unseen_entity_splits(&dataset, &[0.0], 1).is_err());
        assert!(unseen_entity_splits(&dataset, &[1.5], 1).is_err());
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let dataset = synthetic_dataset(4, 2);
        let mut buf = Vec::new();
        write_dataset_jsonl(&dataset, &mut buf).unwrap();
        let back = read_dataset_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, dataset);
    }

    #[test]
    fn validation_against_kb() {
        let kb = KnowledgeBase::build(
            vec![("e".into(), "a".into(), "right content".into())],
            "t",
        )
        .unwrap();
        let mut inst = DatasetInstance {
            entity: "e".into(),
            attribute: "a".into(),
            content: "right content".into(),
            question: "q?".into(),
            answer: "r".into(),
            id: 0,
            flags: BTreeSet::new(),
        };
        inst.validate_against_kb(&kb).unwrap();
        inst.content = "wrong content".into();
        assert!(inst.validate_against_kb(&kb).is_err());
        inst.content = "right content".into();
        inst.attribute = "missing".into();
        assert!(inst.validate_against_kb(&kb).is_err());
    }
}
