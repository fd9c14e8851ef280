//! Structured knowledge base: load, index, and query (entity, attribute,
//! content) triples. Lookup is the exact knowledge function used by the
//! inference loop; [`KnowledgeBase::resolve_attribute`] adds a deterministic
//! fuzzy ladder on top for near-miss attribute predictions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{bigram_dice, normalize};

/// Minimum bigram-Dice similarity for a fuzzy attribute match.
pub const ATTR_DICE_THRESHOLD: f64 = 0.5;

/// One (entity, attribute, content) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeInstance {
    pub entity: String,
    pub attribute: String,
    pub content: String,
    pub id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KbFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    entity: String,
    attribute: String,
    content: String,
}

/// Immutable indexed knowledge base.
///
/// `pair_index` maps the normalized (entity, attribute) pair to the instance
/// id; `entity_index` maps the normalized entity to its canonical (as-loaded)
/// attribute names. Both are derived from `instances` at build time and never
/// mutated afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeBase {
    instances: Vec<KnowledgeInstance>,
    pair_index: HashMap<(String, String), usize>,
    entity_index: BTreeMap<String, BTreeSet<String>>,
    pub source: String,
}

impl KnowledgeBase {
    /// Build from records, rejecting empty fields and duplicate pairs.
    /// `line` numbers in errors are 1-based positions in the input.
    pub fn build<I>(records: I, source: &str) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        let mut kb = KnowledgeBase {
            instances: Vec::new(),
            pair_index: HashMap::new(),
            entity_index: BTreeMap::new(),
            source: source.to_string(),
        };
        for (line0, (entity, attribute, content)) in records.into_iter().enumerate() {
            let line = line0 + 1;
            for (field, value) in [
                ("entity", &entity),
                ("attribute", &attribute),
                ("content", &content),
            ] {
                if normalize(value).is_empty() {
                    return Err(Error::EmptyField {
                        field: field.to_string(),
                        line,
                    });
                }
            }
            let key = (normalize(&entity), normalize(&attribute));
            if kb.pair_index.contains_key(&key) {
                return Err(Error::DuplicatePair {
                    line,
                    entity,
                    attribute,
                });
            }
            let id = kb.instances.len();
            kb.entity_index
                .entry(key.0.clone())
                .or_default()
                .insert(attribute.clone());
            kb.pair_index.insert(key, id);
            kb.instances.push(KnowledgeInstance {
                entity,
                attribute,
                content,
                id,
            });
        }
        Ok(kb)
    }

    pub fn load(path: &Path, format: KbFormat) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let source = path.display().to_string();
        match format {
            KbFormat::Jsonl => Self::from_jsonl(file, &source),
            KbFormat::Csv => Self::from_csv(file, &source),
        }
    }

    /// Guess the format from the file extension (`.csv` → CSV, else JSONL).
    pub fn load_auto(path: &Path) -> Result<Self> {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => KbFormat::Csv,
            _ => KbFormat::Jsonl,
        };
        Self::load(path, format)
    }

    pub fn from_jsonl<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (line0, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = line0 + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            records.push((rec.entity, rec.attribute, rec.content));
        }
        Self::build(records, source)
    }

    pub fn from_csv<R: Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for (line0, row) in rdr.deserialize::<RawRecord>().enumerate() {
            let rec = row.map_err(|e| Error::Parse {
                line: line0 + 2, // header occupies line 1
                message: e.to_string(),
            })?;
            records.push((rec.entity, rec.attribute, rec.content));
        }
        Self::build(records, source)
    }

    /// Write back out as JSONL with keys entity/attribute/content.
    pub fn to_jsonl<W: std::io::Write>(&self, mut writer: W) -> Result<()> {
        for inst in &self.instances {
            let rec = RawRecord {
                entity: inst.entity.clone(),
                attribute: inst.attribute.clone(),
                content: inst.content.clone(),
            };
            serde_json::to_writer(&mut writer, &rec)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[KnowledgeInstance] {
        &self.instances
    }

    pub fn get(&self, id: usize) -> Option<&KnowledgeInstance> {
        self.instances.get(id)
    }

    /// The knowledge function: content for the normalized (entity, attribute)
    /// pair, or `None`. A miss is never an error; the caller falls back.
    pub fn lookup(&self, entity: &str, attribute: &str) -> Option<&str> {
        self.pair_index
            .get(&(normalize(entity), normalize(attribute)))
            .map(|&id| self.instances[id].content.as_str())
    }

    pub fn lookup_instance(&self, entity: &str, attribute: &str) -> Option<&KnowledgeInstance> {
        self.pair_index
            .get(&(normalize(entity), normalize(attribute)))
            .map(|&id| &self.instances[id])
    }

    pub fn contains_pair(&self, entity: &str, attribute: &str) -> bool {
        self.pair_index
            .contains_key(&(normalize(entity), normalize(attribute)))
    }

    /// Sorted canonical attribute names known for an entity; empty when the
    /// entity is unknown.
    pub fn attributes_of(&self, entity: &str) -> Vec<String> {
        self.entity_index
            .get(&normalize(entity))
            .map(|set| set.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Resolve a predicted attribute against the entity's candidates:
    /// exact normalized match, then substring containment in either
    /// direction, then bigram-Dice >= 0.5 (maximum wins, ties to the
    /// lexicographically smallest candidate). Never fabricates an attribute.
    pub fn resolve_attribute(&self, entity: &str, attr_pred: &str) -> Option<String> {
        let candidates = self.attributes_of(entity);
        if candidates.is_empty() {
            return None;
        }
        let pred = normalize(attr_pred);
        if pred.is_empty() {
            return None;
        }
        for cand in &candidates {
            if normalize(cand) == pred {
                return Some(cand.clone());
            }
        }
        for cand in &candidates {
            let cn = normalize(cand);
            if cn.contains(&pred) || pred.contains(&cn) {
                return Some(cand.clone());
            }
        }
        let mut best: Option<(f64, &String)> = None;
        for cand in &candidates {
            let score = bigram_dice(&normalize(cand), &pred);
            if score >= ATTR_DICE_THRESHOLD {
                // candidates are sorted, so strict > keeps the smallest on ties
                let better = match best {
                    Some((b, _)) => score > b,
                    None => true,
                };
                if better {
                    best = Some((score, cand));
                }
            }
        }
        best.map(|(_, c)| c.clone())
    }
}
