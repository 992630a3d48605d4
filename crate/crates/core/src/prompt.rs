//! Turning a support exemplar into a captioning instruction, and the returned
//! description into the phrase prompts fed to the grounding detector.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, CoreError, Result};
use crate::model::{ClassCatalog, ClassPhrases, PhraseLibrary, SupportTriple};

const DOMAIN_SLOT: &str = "{domain}";
const CLASS_SLOT: &str = "{class_name}";

/// Captioning instruction with `{domain}` and `{class_name}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    text: String,
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        Self {
            text: "This is a {domain} image. The masked object is a {class_name}. \
                   Describe it in one short sentence using the word {class_name}"
                .to_string(),
        }
    }
}

impl InstructionTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if !text.contains(DOMAIN_SLOT) || !text.contains(CLASS_SLOT) {
            return Err(validation(format!(
                "instruction template must contain {} and {}",
                DOMAIN_SLOT, CLASS_SLOT
            )));
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn render(&self, domain: &str, class_name: &str) -> Result<String> {
        let domain = domain.trim();
        let class_name = class_name.trim();
        if domain.is_empty() {
            return Err(validation("domain tag is empty"));
        }
        if class_name.is_empty() {
            return Err(validation("class name is empty"));
        }
        Ok(self
            .text
            .replace(DOMAIN_SLOT, domain)
            .replace(CLASS_SLOT, class_name))
    }
}

/// Renders the default instruction for one support exemplar.
pub fn render_instruction(support: &SupportTriple) -> Result<String> {
    InstructionTemplate::default().render(&support.domain_tag, &support.class_name)
}

/// How the per-class prompt list is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhraseMode {
    /// Class names only.
    ClassName,
    /// Phrases segmented out of the exemplar description.
    #[default]
    SupportText,
    /// The whole description as a single phrase.
    FullSentence,
}

impl PhraseMode {
    pub const ALL: [PhraseMode; 3] = [
        PhraseMode::ClassName,
        PhraseMode::SupportText,
        PhraseMode::FullSentence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PhraseMode::ClassName => "class-name",
            PhraseMode::SupportText => "support-text",
            PhraseMode::FullSentence => "full-sentence",
        }
    }
}

impl fmt::Display for PhraseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhraseMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        PhraseMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| validation(format!("unknown phrase mode {:?}", s)))
    }
}

/// Knobs of the deterministic segmentation rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhraseRules {
    pub max_words: usize,
    pub min_chars: usize,
}

impl Default for PhraseRules {
    fn default() -> Self {
        Self {
            max_words: 12,
            min_chars: 2,
        }
    }
}

const ARTICLES: &[&str] = &["a", "an", "the"];
const CONJUNCTIONS: &[&str] = &["and", "or"];
const PREPOSITIONS: &[&str] = &[
    "with", "of", "in", "on", "at", "by", "for", "from", "into", "onto", "over", "under", "near",
    "along", "across", "around", "between", "against", "among", "through", "within", "without",
    "to", "beneath", "behind", "above", "below", "beside", "upon",
];

fn is_one_of(word: &str, set: &[&str]) -> bool {
    set.iter().any(|w| w.eq_ignore_ascii_case(word))
}

fn is_function_word(word: &str) -> bool {
    is_one_of(word, ARTICLES) || is_one_of(word, PREPOSITIONS) || is_one_of(word, CONJUNCTIONS)
}

/// Splits one punctuation-free clause into modifier groups. A group breaks
/// before "with", and before "and" when the next word opens a new group
/// (an article or preposition).
fn split_clause<'a>(words: &[&'a str]) -> Vec<Vec<&'a str>> {
    let mut groups: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (k, &w) in words.iter().enumerate() {
        let breaks = if w.eq_ignore_ascii_case("with") {
            true
        } else if w.eq_ignore_ascii_case("and") {
            words
                .get(k + 1)
                .is_some_and(|next| is_one_of(next, ARTICLES) || is_one_of(next, PREPOSITIONS))
        } else {
            false
        };
        if breaks && !current.is_empty() {
            groups.push(std::mem::take(&mut current));
        }
        current.push(w);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

fn strip_leading_function_words<'s, 'a>(mut words: &'s [&'a str]) -> &'s [&'a str] {
    while let Some((first, rest)) = words.split_first() {
        if is_function_word(first) {
            words = rest;
        } else {
            break;
        }
    }
    words
}

/// Bounds a group to `max_words`, re-splitting at the conjunction nearest the
/// midpoint and truncating when there is none.
fn bound_length<'a>(words: &[&'a str], max_words: usize, out: &mut Vec<Vec<&'a str>>) {
    if words.len() <= max_words {
        out.push(words.to_vec());
        return;
    }
    let mid = words.len() / 2;
    let pivot = words
        .iter()
        .enumerate()
        .filter(|(k, w)| *k > 0 && *k + 1 < words.len() && is_one_of(w, CONJUNCTIONS))
        .min_by_key(|(k, _)| k.abs_diff(mid))
        .map(|(k, _)| k);
    match pivot {
        Some(k) => {
            bound_length(&words[..k], max_words, out);
            bound_length(strip_leading_function_words(&words[k + 1..]), max_words, out);
        }
        None => out.push(words[..max_words].to_vec()),
    }
}

/// Segments a description into phrases using the default rules.
pub fn extract_phrases(description: &str, class_name: &str) -> Vec<String> {
    extract_phrases_with(description, class_name, &PhraseRules::default())
}

/// Segments a description into phrases.
///
/// Clauses are cut at `,` `.` `;` and line breaks, then into modifier groups
/// (see [`split_clause`]). Leading articles, prepositions and conjunctions are
/// dropped, as are groups shorter than `min_chars`. Duplicates (ignoring
/// case) keep their first occurrence. Never returns an empty list: the class
/// name is the fallback.
pub fn extract_phrases_with(description: &str, class_name: &str, rules: &PhraseRules) -> Vec<String> {
    let mut phrases = Vec::new();
    let mut seen = HashSet::new();
    for clause in description.split([',', '.', ';', '\n', '\r']) {
        let words: Vec<&str> = clause.split_whitespace().collect();
        for group in split_clause(&words) {
            let group = strip_leading_function_words(&group);
            if group.is_empty() {
                continue;
            }
            let mut bounded = Vec::new();
            bound_length(group, rules.max_words.max(1), &mut bounded);
            for words in bounded {
                let phrase = words.join(" ");
                if phrase.chars().count() < rules.min_chars {
                    continue;
                }
                if seen.insert(phrase.to_lowercase()) {
                    phrases.push(phrase);
                }
            }
        }
    }
    if phrases.is_empty() {
        phrases.push(class_name.trim().to_string());
    }
    phrases
}

/// Builds one library entry from a description according to `mode`.
pub fn library_entry(
    class_id: u32,
    class_name: &str,
    description: &str,
    mode: PhraseMode,
    rules: &PhraseRules,
) -> Result<ClassPhrases> {
    let name = class_name.trim();
    let phrases = match mode {
        PhraseMode::ClassName => vec![name.to_string()],
        PhraseMode::SupportText => extract_phrases_with(description, name, rules),
        PhraseMode::FullSentence => {
            let sentence = description
                .trim()
                .trim_end_matches(['.', '!', '?'])
                .trim();
            if sentence.is_empty() {
                vec![name.to_string()]
            } else {
                vec![sentence.to_string()]
            }
        }
    };
    ClassPhrases::new(class_id, name, description.trim(), phrases)
}

/// Re-derives the phrase lists of an existing library under another mode,
/// keeping the descriptions. Support-text mode keeps the stored phrases.
pub fn remap_library(library: &PhraseLibrary, mode: PhraseMode, rules: &PhraseRules) -> Result<PhraseLibrary> {
    let entries = library
        .iter()
        .map(|e| match mode {
            PhraseMode::SupportText => Ok(e.clone()),
            _ => library_entry(e.class_id, &e.class_name, &e.description, mode, rules),
        })
        .collect::<Result<Vec<_>>>()?;
    PhraseLibrary::new(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub class_id: u32,
    /// 1-based position within the class.
    pub phrase_index: usize,
    pub text: String,
}

/// The flattened phrase prompt set, ordered by class id then phrase index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    prompts: Vec<PromptEntry>,
    phrase_counts: Vec<usize>,
}

impl PromptSet {
    pub fn entries(&self) -> &[PromptEntry] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// `M_c` per class, in class-id order.
    pub fn phrase_counts(&self) -> &[usize] {
        &self.phrase_counts
    }

    pub fn num_classes(&self) -> usize {
        self.phrase_counts.len()
    }

    /// Prompts of one class, in phrase order.
    pub fn class_prompts(&self, class_id: u32) -> impl Iterator<Item = &PromptEntry> {
        self.prompts.iter().filter(move |p| p.class_id == class_id)
    }

    /// Rebuilds a prompt set received over the wire, checking its ordering.
    pub fn from_entries(prompts: Vec<PromptEntry>) -> Result<Self> {
        let mut phrase_counts: Vec<usize> = Vec::new();
        for (k, p) in prompts.iter().enumerate() {
            let class_idx = p.class_id as usize;
            if class_idx == 0 || class_idx > phrase_counts.len() + 1 || class_idx < phrase_counts.len() {
                return Err(validation(format!("prompt {} has out-of-order class id {}", k, p.class_id)));
            }
            if class_idx == phrase_counts.len() + 1 {
                phrase_counts.push(0);
            }
            phrase_counts[class_idx - 1] += 1;
            if p.phrase_index != phrase_counts[class_idx - 1] {
                return Err(validation(format!(
                    "prompt {} has phrase index {}, expected {}",
                    k,
                    p.phrase_index,
                    phrase_counts[class_idx - 1]
                )));
            }
            if p.text.trim().is_empty() {
                return Err(validation(format!("prompt {} is empty", k)));
            }
        }
        if prompts.is_empty() {
            return Err(validation("prompt set is empty"));
        }
        Ok(Self {
            prompts,
            phrase_counts,
        })
    }
}

/// Flattens the library into the detector prompt set. Every catalog class
/// must be present.
pub fn build_prompt_set(library: &PhraseLibrary, catalog: &ClassCatalog) -> Result<PromptSet> {
    if library.is_empty() {
        return Err(validation("phrase library is empty"));
    }
    let mut prompts = Vec::new();
    let mut phrase_counts = Vec::with_capacity(catalog.len());
    for class in catalog.iter() {
        let entry = library
            .get(class.class_id)
            .ok_or_else(|| validation(format!("phrase library is missing class {}", class.class_id)))?;
        phrase_counts.push(entry.phrases.len());
        prompts.extend(entry.phrases.iter().enumerate().map(|(m, text)| PromptEntry {
            class_id: class.class_id,
            phrase_index: m + 1,
            text: text.clone(),
        }));
    }
    if let Some(extra) = library.iter().find(|e| !catalog.contains(e.class_id)) {
        return Err(CoreError::UnknownId {
            kind: "class",
            id: extra.class_id as u64,
        });
    }
    Ok(PromptSet {
        prompts,
        phrase_counts,
    })
}
