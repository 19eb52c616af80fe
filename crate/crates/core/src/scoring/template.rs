use serde::{Deserialize, Serialize};

use crate::data::{segment, PersonalizedExample, TokenSeq, Vocab, BOS_ID};
use crate::error::{Error, Result};

/// Where the persona block sits in the rendered context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaPosition {
    /// `<bos> [persona] instruction query_header query response_delimiter`
    BeforeInstruction,
    /// `<bos> instruction query_header query [persona] response_delimiter`
    #[default]
    AfterQuery,
}

/// Framing text around the persona, query and response.
///
/// The bracketed persona block (`persona_header` followed by the persona
/// sentences) is dropped entirely when the persona is removed or empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub persona_header: String,
    pub instruction: String,
    pub query_header: String,
    pub response_delimiter: String,
    #[serde(default)]
    pub persona_position: PersonaPosition,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            persona_header: "persona :".into(),
            instruction: String::new(),
            query_header: "question :".into(),
            response_delimiter: "answer :".into(),
            persona_position: PersonaPosition::default(),
        }
    }
}

impl PromptTemplate {
    pub fn words(&self) -> Vec<String> {
        [
            &self.persona_header,
            &self.instruction,
            &self.query_header,
            &self.response_delimiter,
        ]
        .iter()
        .flat_map(|s| segment(s))
        .collect()
    }

    pub fn compile(&self, vocab: &Vocab) -> Result<CompiledTemplate> {
        let required = [
            ("persona_header", &self.persona_header),
            ("query_header", &self.query_header),
            ("response_delimiter", &self.response_delimiter),
        ];
        for (name, text) in required {
            if segment(text).is_empty() {
                return Err(Error::Template(format!("{name} is empty")));
            }
        }
        Ok(CompiledTemplate {
            persona_header: vocab.encode(&self.persona_header),
            instruction: vocab.encode(&self.instruction),
            query_header: vocab.encode(&self.query_header),
            response_delimiter: vocab.encode(&self.response_delimiter),
            persona_position: self.persona_position,
        })
    }
}

/// A [`PromptTemplate`] mapped to token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompiledTemplate {
    pub persona_header: TokenSeq,
    pub instruction: TokenSeq,
    pub query_header: TokenSeq,
    pub response_delimiter: TokenSeq,
    pub persona_position: PersonaPosition,
}

impl CompiledTemplate {
    fn render(&self, persona: &[TokenSeq], query: &[u32]) -> TokenSeq {
        let persona_block = |out: &mut TokenSeq| {
            if !persona.is_empty() {
                out.extend(&self.persona_header);
                persona.iter().for_each(|s| out.extend(s));
            }
        };
        let mut out = vec![BOS_ID];
        if self.persona_position == PersonaPosition::BeforeInstruction {
            persona_block(&mut out);
        }
        out.extend(&self.instruction);
        out.extend(&self.query_header);
        out.extend(query);
        if self.persona_position == PersonaPosition::AfterQuery {
            persona_block(&mut out);
        }
        out.extend(&self.response_delimiter);
        out
    }
}

/// Renders the persona-conditioned and persona-removed contexts. Everything
/// but the persona block is token-identical between the two.
pub fn render_contexts(ex: &PersonalizedExample, template: &CompiledTemplate) -> (TokenSeq, TokenSeq) {
    (
        template.render(&ex.persona, &ex.query),
        template.render(&[], &ex.query),
    )
}

/// An example with both contexts rendered once; the response is shared so
/// positions align between the two scoring passes.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedExample {
    pub user_id: String,
    pub with_persona: TokenSeq,
    pub without_persona: TokenSeq,
    pub response: TokenSeq,
    pub gold_personal_mask: Option<Vec<bool>>,
}

impl RenderedExample {
    pub fn new(ex: &PersonalizedExample, template: &CompiledTemplate) -> Self {
        let (with_persona, without_persona) = render_contexts(ex, template);
        Self {
            user_id: ex.user_id.clone(),
            with_persona,
            without_persona,
            response: ex.response.clone(),
            gold_personal_mask: ex.gold_personal_mask.clone(),
        }
    }

    pub fn full_len(&self) -> usize {
        self.with_persona.len() + self.response.len()
    }
}
