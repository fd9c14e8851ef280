//! Prompt templates for every pipeline stage.
//!
//! Templates are configuration, not code: they can be loaded from a JSON
//! file, and defaults ship for both locales. Slots use `{question}`,
//! `{entity}`, `{knowledge}`, `{answer}` and `{response}` markers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locale {
    Zh,
    En,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub p_entity: String,
    pub p_attribute: String,
    pub p_response_knowledge: String,
    pub p_response_plain: String,
    pub p_datagen: String,
    pub p_assess: String,
    pub p_judge: String,
    pub locale: Locale,
    /// When set, the plain-response template mirrors the knowledge-response
    /// instruction text instead of the default knowledge-free wording.
    #[serde(default)]
    pub plain_uses_knowledge_wording: bool,
}

impl PromptTemplates {
    pub fn default_en() -> Self {
        Self {
            p_entity: "{question}\nWhat medical entity, like disease or drug, is mentioned in this question?".into(),
            p_attribute: "{question}\nWhat attribute about the {entity} is mentioned in this question?".into(),
            p_response_knowledge: "{knowledge}\n{question}\nAnswer the question with the above medical knowledge.".into(),
            p_response_plain: "{question}\nAnswer the question.".into(),
            p_datagen: "{knowledge}\nPlease combine the above medical knowledge, ask a question, and answer it with reference to the knowledge.".into(),
            p_assess: "{knowledge}\nQuestion: {question}\nAnswer: {answer}\nIs the answer faithful to the above medical knowledge? Reply with a single word: yes or no.".into(),
            p_judge: "Question: {question}\nResponse: {response}\nRate the quality of the response for the question. Reply with a single word: good, moderate or bad.".into(),
            locale: Locale::En,
            plain_uses_knowledge_wording: false,
        }
    }

    pub fn default_zh() -> Self {
        Self {
            p_entity: "{question}\n这个问题中提到了哪个医学实体（如疾病或药物）？".into(),
            p_attribute: "{question}\n这个问题中提到了{entity}的哪个属性？".into(),
            p_response_knowledge: "{knowledge}\n{question}\n请根据以上医学知识回答该问题。".into(),
            p_response_plain: "{question}\n请回答该问题。".into(),
            p_datagen: "{knowledge}\n请结合以上医学知识，提出一个问题，并参考该知识回答。".into(),
            p_assess: "{knowledge}\n问题：{question}\n回答：{answer}\n该回答是否忠实于以上医学知识？请用一个词回答：是 或 否。".into(),
            p_judge: "问题：{question}\n回答：{response}\n请评价该回答的质量。请用一个词回答：好、中等 或 差。".into(),
            locale: Locale::Zh,
            plain_uses_knowledge_wording: false,
        }
    }

    pub fn for_locale(locale: Locale) -> Self {
        match locale {
            Locale::En => Self::default_en(),
            Locale::Zh => Self::default_zh(),
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Entity-prediction prompt: the question plus the entity instruction.
    pub fn render_entity_prompt(&self, question: &str) -> Result<String> {
        if question.trim().is_empty() {
            return Err(Error::Template("empty query".into()));
        }
        Ok(self.p_entity.replace("{question}", question))
    }

    /// Attribute-prediction prompt with the entity slot filled; candidate
    /// attributes, when given, are appended as an enumerated list.
    pub fn render_attr_prompt(
        &self,
        question: &str,
        entity: &str,
        candidates: Option<&[String]>,
    ) -> Result<String> {
        if entity.trim().is_empty() {
            return Err(Error::Template("empty entity".into()));
        }
        let mut prompt = self
            .p_attribute
            .replace("{question}", question)
            .replace("{entity}", entity);
        if let Some(cands) = candidates {
            if !cands.is_empty() {
                prompt.push_str("\nCandidate attributes:");
                for (i, cand) in cands.iter().enumerate() {
                    prompt.push_str(&format!("\n{}. {}", i + 1, cand));
                }
            }
        }
        Ok(prompt)
    }

    /// Knowledge-grounded response prompt: knowledge first, then question.
    pub fn render_rk_prompt(&self, question: &str, knowledge: &str) -> Result<String> {
        if knowledge.trim().is_empty() {
            return Err(Error::Template("empty knowledge".into()));
        }
        Ok(self
            .p_response_knowledge
            .replace("{knowledge}", knowledge)
            .replace("{question}", question))
    }

    /// Plain (knowledge-free) response prompt.
    pub fn render_plain_prompt(&self, question: &str) -> Result<String> {
        if question.trim().is_empty() {
            return Err(Error::Template("empty query".into()));
        }
        if self.plain_uses_knowledge_wording {
            // mirrors the knowledge-response instruction, without a knowledge slot
            let instruction = self
                .p_response_knowledge
                .replace("{knowledge}\n", "")
                .replace("{knowledge}", "");
            return Ok(instruction.replace("{question}", question));
        }
        Ok(self.p_response_plain.replace("{question}", question))
    }

    fn knowledge_block(inst: &KnowledgeInstance) -> String {
        format!(
            "Entity: {}\nAttribute: {}\nKnowledge content: {}",
            inst.entity, inst.attribute, inst.content
        )
    }

    /// QA-generation prompt for one knowledge triple.
    pub fn render_datagen_prompt(&self, inst: &KnowledgeInstance) -> Result<String> {
        Ok(self
            .p_datagen
            .replace("{knowledge}", &Self::knowledge_block(inst)))
    }

    /// Self-assessment prompt: is the answer faithful to the knowledge?
    pub fn render_assess_prompt(
        &self,
        inst: &KnowledgeInstance,
        question: &str,
        answer: &str,
    ) -> Result<String> {
        Ok(self
            .p_assess
            .replace("{knowledge}", &Self::knowledge_block(inst))
            .replace("{question}", question)
            .replace("{answer}", answer))
    }

    /// Judge prompt asking for a single-word good/moderate/bad verdict.
    pub fn render_judge_prompt(&self, question: &str, response: &str) -> Result<String> {
        Ok(self
            .p_judge
            .replace("{question}", question)
            .replace("{response}", response))
    }
}
