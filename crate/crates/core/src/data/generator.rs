//! Procedural persona question-answering corpora with exact personal-token labels.
//!
//! Every user gets one value per attribute. The persona states each value in
//! a fixed sentence; a query asks about one attribute; the response is fixed
//! filler text (determined by the query) around slot words that can only be
//! recovered from the persona. Slot words are the gold personal tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::example::{Dataset, Record, Split};
use super::vocab::segment;
use crate::error::{Error, Result};

/// Smallest value list for which a slot is not effectively guessable.
pub const MIN_VALUES_PER_ATTRIBUTE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaTemplate {
    pub query: String,
    /// Response text with `{attribute}` slot markers.
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeTemplate {
    pub attribute: String,
    /// Persona sentence with `{attribute}` slot markers.
    pub persona: String,
    pub qa: Vec<QaTemplate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_users: usize,
    pub queries_per_user: usize,
    pub seed: u64,
    /// Candidate values per attribute, as they appear in responses.
    pub attributes: BTreeMap<String, Vec<String>>,
    /// Alternative surface forms used in the persona when a slot is
    /// paraphrased; index-aligned with `attributes`.
    #[serde(default)]
    pub persona_forms: BTreeMap<String, Vec<String>>,
    /// Probability that a (user, attribute) value is stated in the persona by
    /// its alternative form instead of the response word.
    #[serde(default)]
    pub paraphrase_rate: f64,
    pub templates: Vec<AttributeTemplate>,
    /// Attributes per user whose queries are held out for the test split.
    #[serde(default = "default_test_attributes")]
    pub test_attributes_per_user: usize,
}

fn default_test_attributes() -> usize {
    1
}

#[derive(Clone, Debug)]
pub struct GeneratedCorpus {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

#[derive(Debug, PartialEq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn parse_template(t: &str) -> Result<Vec<Piece<'_>>> {
    let mut pieces = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Text(&rest[..open]));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Generator(format!("unclosed slot in {t:?}")))?;
        pieces.push(Piece::Slot(&rest[open + 1..open + close]));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    Ok(pieces)
}

impl GeneratorSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Checks internal consistency; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let err = |m: String| Err(Error::Generator(m));
        if self.n_users == 0 || self.queries_per_user == 0 {
            return err("n_users and queries_per_user must be positive".into());
        }
        if self.templates.is_empty() {
            return err("at least one attribute template is required".into());
        }
        if !(0.0..=1.0).contains(&self.paraphrase_rate) {
            return err(format!("paraphrase_rate {} outside [0, 1]", self.paraphrase_rate));
        }
        if self.test_attributes_per_user >= self.templates.len() {
            return err(format!(
                "test_attributes_per_user {} leaves no training attribute out of {}",
                self.test_attributes_per_user,
                self.templates.len()
            ));
        }
        for (attr, values) in &self.attributes {
            if values.is_empty() {
                return err(format!("attribute {attr:?} has no values"));
            }
            if values.iter().any(|v| segment(v).is_empty()) {
                return err(format!("attribute {attr:?} has a blank value"));
            }
        }
        for (attr, forms) in &self.persona_forms {
            match self.attributes.get(attr) {
                Some(v) if v.len() == forms.len() => {}
                Some(_) => return err(format!("persona_forms for {attr:?} misaligned with values")),
                None => return err(format!("persona_forms names unknown attribute {attr:?}")),
            }
        }
        let check_slots = |text: &str| -> Result<usize> {
            let mut n = 0;
            for p in parse_template(text)? {
                if let Piece::Slot(a) = p {
                    if !self.attributes.contains_key(a) {
                        return Err(Error::Generator(format!(
                            "slot {{{a}}} in {text:?} names no attribute"
                        )));
                    }
                    n += 1;
                }
            }
            Ok(n)
        };
        for t in &self.templates {
            if !self.attributes.contains_key(&t.attribute) {
                return err(format!("template for unknown attribute {:?}", t.attribute));
            }
            if check_slots(&t.persona)? == 0 {
                return err(format!("persona template {:?} has no slot", t.persona));
            }
            if t.qa.is_empty() {
                return err(format!("attribute {:?} has no query templates", t.attribute));
            }
            for qa in &t.qa {
                if check_slots(&qa.response)? == 0 {
                    return err(format!("response template {:?} has no slot", qa.response));
                }
                if check_slots(&qa.query)? != 0 {
                    return err(format!("query {:?} must not contain slots", qa.query));
                }
            }
        }
        let mut warnings = Vec::new();
        for (attr, values) in &self.attributes {
            if values.len() < MIN_VALUES_PER_ATTRIBUTE {
                warnings.push(format!(
                    "attribute {attr:?} has only {} value(s); its slot tokens are predictable from the query alone",
                    values.len()
                ));
            }
        }
        Ok(warnings)
    }

    /// Every word the generator can emit.
    pub fn words(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |s: &str| out.extend(segment(s));
        for v in self.attributes.values().chain(self.persona_forms.values()).flatten() {
            add(v);
        }
        for t in &self.templates {
            for p in parse_template(&t.persona).unwrap_or_default() {
                if let Piece::Text(s) = p {
                    add(s);
                }
            }
            for qa in &t.qa {
                add(&qa.query);
                for p in parse_template(&qa.response).unwrap_or_default() {
                    if let Piece::Text(s) = p {
                        add(s);
                    }
                }
            }
        }
        out
    }

    /// The 100-user, 4-attribute, 8-value desk corpus.
    pub fn desk_default() -> Self {
        let attr = |values: &[&str]| values.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let attributes = BTreeMap::from([
            ("color".into(), attr(&["red", "blue", "green", "yellow", "purple", "orange", "black", "white"])),
            ("pet".into(), attr(&["dog", "cat", "parrot", "rabbit", "hamster", "turtle", "horse", "goldfish"])),
            ("city".into(), attr(&["paris", "tokyo", "london", "cairo", "lima", "oslo", "sydney", "toronto"])),
            ("food".into(), attr(&["pizza", "sushi", "pasta", "tacos", "curry", "salad", "soup", "noodles"])),
        ]);
        let persona_forms = BTreeMap::from([
            ("color".into(), attr(&["scarlet", "azure", "emerald", "golden", "violet", "amber", "ebony", "ivory"])),
            ("pet".into(), attr(&["puppy", "kitten", "cockatoo", "bunny", "gerbil", "tortoise", "stallion", "carp"])),
            ("city".into(), attr(&["lutetia", "edo", "londinium", "fustat", "rimac", "christiania", "warrane", "tkaronto"])),
            ("food".into(), attr(&["flatbread", "sashimi", "spaghetti", "tortillas", "masala", "greens", "broth", "ramen"])),
        ]);
        let qa = |pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|(q, r)| QaTemplate {
                    query: q.to_string(),
                    response: r.to_string(),
                })
                .collect()
        };
        let templates = vec![
            AttributeTemplate {
                attribute: "color".into(),
                persona: "i prefer {color} ,".into(),
                qa: qa(&[
                    ("what color do i like ?", "you prefer {color}"),
                    ("which color is my favorite ?", "you prefer {color}"),
                ]),
            },
            AttributeTemplate {
                attribute: "pet".into(),
                persona: "i own a {pet} ,".into(),
                qa: qa(&[
                    ("what pet do i have ?", "you own a {pet}"),
                    ("which animal lives with me ?", "you own a {pet}"),
                ]),
            },
            AttributeTemplate {
                attribute: "city".into(),
                persona: "i live in {city} ,".into(),
                qa: qa(&[
                    ("where do i live ?", "you live in {city}"),
                    ("which city is my home ?", "you live in {city}"),
                ]),
            },
            AttributeTemplate {
                attribute: "food".into(),
                persona: "i love {food} ,".into(),
                qa: qa(&[
                    ("what food do i love ?", "you love {food}"),
                    ("what do i like to eat ?", "you love {food}"),
                ]),
            },
        ];
        Self {
            n_users: 100,
            queries_per_user: 5,
            seed: 0,
            attributes,
            persona_forms,
            paraphrase_rate: 0.0,
            templates,
            test_attributes_per_user: 1,
        }
    }

    /// Desk corpus with terse answers, so roughly half of the response tokens
    /// are slot values.
    pub fn desk_slot_heavy() -> Self {
        let mut spec = Self::desk_default();
        for t in &mut spec.templates {
            for qa in &mut t.qa {
                qa.response = qa.response.trim_start_matches("you ").trim_start_matches("live ").to_string();
            }
        }
        spec
    }

    /// Desk corpus where most persona values are stated by a different word
    /// than the one the response uses.
    pub fn desk_paraphrased() -> Self {
        Self {
            paraphrase_rate: 0.75,
            ..Self::desk_default()
        }
    }
}

/// Expands a template into words plus a per-word slot flag.
fn fill(template: &str, values: &BTreeMap<&str, &str>) -> Result<(String, Vec<bool>)> {
    let mut words = Vec::new();
    let mut mask = Vec::new();
    let mut text = String::new();
    for p in parse_template(template)? {
        let (s, is_slot) = match p {
            Piece::Text(s) => (s, false),
            Piece::Slot(a) => (values[a], true),
        };
        let seg = segment(s);
        mask.extend(std::iter::repeat_n(is_slot, seg.len()));
        words.extend(seg);
        text.push_str(s);
    }
    if segment(&text) != words {
        return Err(Error::Generator(format!(
            "slot boundaries in {template:?} do not align with word boundaries"
        )));
    }
    Ok((words.join(" "), mask))
}

/// Generates a corpus; the same spec always yields the same records.
pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedCorpus> {
    let warnings = spec.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n_users * spec.queries_per_user);
    let width = spec.n_users.saturating_sub(1).to_string().len().max(3);

    for u in 0..spec.n_users {
        let user_id = format!("user{u:0width$}");
        let mut response_values = BTreeMap::new();
        let mut persona_values = BTreeMap::new();
        for (attr, values) in &spec.attributes {
            let i = rng.gen_range(0..values.len());
            response_values.insert(attr.as_str(), values[i].as_str());
            let paraphrase = spec.paraphrase_rate > 0.0 && rng.gen_bool(spec.paraphrase_rate);
            let shown = match spec.persona_forms.get(attr) {
                Some(forms) if paraphrase => forms[i].as_str(),
                _ => values[i].as_str(),
            };
            persona_values.insert(attr.as_str(), shown);
        }
        let persona = spec
            .templates
            .iter()
            .map(|t| fill(&t.persona, &persona_values).map(|(s, _)| s))
            .collect::<Result<Vec<_>>>()?;

        let mut order: Vec<usize> = (0..spec.templates.len()).collect();
        order.shuffle(&mut rng);
        let mut held_out = order.clone();
        held_out.shuffle(&mut rng);
        held_out.truncate(spec.test_attributes_per_user);

        for k in 0..spec.queries_per_user {
            let t = order[k % order.len()];
            let template = &spec.templates[t];
            let qa = &template.qa[rng.gen_range(0..template.qa.len())];
            let (response, mask) = fill(&qa.response, &response_values)?;
            records.push(Record {
                user_id: user_id.clone(),
                persona: persona.clone(),
                query: segment(&qa.query).join(" "),
                response,
                personal_mask: Some(mask.into_iter().map(u8::from).collect()),
                split: Some(if held_out.contains(&t) { Split::Test } else { Split::Train }),
            });
        }
    }
    Ok(GeneratedCorpus {
        dataset: Dataset::new(records),
        warnings,
    })
}
