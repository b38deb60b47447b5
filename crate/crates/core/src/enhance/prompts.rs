//! Enhancer prompt templates and message construction.
//!
//! Templates are plain text with a `{query_txt}` slot and an `<image>` marker
//! that becomes an image attachment at that position in the message.

use crate::error::{Error, Result};

pub const QUERY_SLOT: &str = "{query_txt}";
pub const IMAGE_MARKER: &str = "<image>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    CorpusCaption,
    QueryCaption,
    QaRewrite,
    Modification,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::CorpusCaption,
        TemplateId::QueryCaption,
        TemplateId::QaRewrite,
        TemplateId::Modification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::CorpusCaption => "corpus_caption",
            TemplateId::QueryCaption => "query_caption",
            TemplateId::QaRewrite => "qa_rewrite",
            TemplateId::Modification => "modification",
        }
    }

    pub fn template(self) -> PromptTemplate {
        match self {
            TemplateId::CorpusCaption => PromptTemplate {
                id: self,
                body: CORPUS_CAPTION,
                wants_image: true,
            },
            TemplateId::QueryCaption => PromptTemplate {
                id: self,
                body: QUERY_CAPTION,
                wants_image: true,
            },
            TemplateId::QaRewrite => PromptTemplate {
                id: self,
                body: QA_REWRITE,
                wants_image: true,
            },
            // The reference image is never sent: it biases the rewrite toward
            // what is visible rather than the requested change.
            TemplateId::Modification => PromptTemplate {
                id: self,
                body: MODIFICATION,
                wants_image: false,
            },
        }
    }

    /// Word budget stated in the prompt, if any.
    pub fn word_budget(self) -> Option<usize> {
        match self {
            TemplateId::CorpusCaption => Some(100),
            TemplateId::QueryCaption => Some(50),
            TemplateId::QaRewrite | TemplateId::Modification => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
    pub wants_image: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptPart {
    Text(String),
    Image(String),
}

/// A single user message: text interleaved with image attachments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptMessage {
    pub template_id: TemplateId,
    pub parts: Vec<PromptPart>,
}

impl PromptMessage {
    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, PromptPart::Image(_)))
            .count()
    }

    /// The message text with each attachment shown as the image marker.
    pub fn rendered_text(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                PromptPart::Text(t) => t.as_str(),
                PromptPart::Image(_) => IMAGE_MARKER,
            })
            .collect()
    }
}

impl PromptTemplate {
    fn build(&self, query_text: Option<&str>, image_ref: Option<&str>) -> Result<PromptMessage> {
        // Markers are located in the template before substitution so user
        // text can never introduce an attachment.
        let mut parts = Vec::new();
        let mut pieces = self.body.split(IMAGE_MARKER).peekable();
        while let Some(piece) = pieces.next() {
            let piece = match query_text {
                Some(q) => piece.replace(QUERY_SLOT, q),
                None => piece.to_owned(),
            };
            if !piece.is_empty() {
                parts.push(PromptPart::Text(piece));
            }
            if pieces.peek().is_some() {
                let image = image_ref.ok_or_else(|| {
                    Error::Prompt(format!("{} requires an image", self.id.as_str()))
                })?;
                parts.push(PromptPart::Image(image.to_owned()));
            }
        }
        Ok(PromptMessage {
            template_id: self.id,
            parts,
        })
    }
}

fn require_text(template: TemplateId, text: &str) -> Result<&str> {
    if text.trim().is_empty() {
        Err(Error::Prompt(format!(
            "{} requires non-empty query text",
            template.as_str()
        )))
    } else {
        Ok(text)
    }
}

fn require_image(template: TemplateId, image_ref: &str) -> Result<&str> {
    if image_ref.is_empty() {
        Err(Error::Prompt(format!(
            "{} requires an image reference",
            template.as_str()
        )))
    } else {
        Ok(image_ref)
    }
}

pub fn build_corpus_caption_prompt(image_ref: &str) -> Result<PromptMessage> {
    let image = require_image(TemplateId::CorpusCaption, image_ref)?;
    TemplateId::CorpusCaption
        .template()
        .build(None, Some(image))
}

pub fn build_query_caption_prompt(image_ref: &str) -> Result<PromptMessage> {
    let image = require_image(TemplateId::QueryCaption, image_ref)?;
    TemplateId::QueryCaption.template().build(None, Some(image))
}

pub fn build_qa_rewrite_prompt(query_text: &str, image_ref: &str) -> Result<PromptMessage> {
    let text = require_text(TemplateId::QaRewrite, query_text)?;
    let image = require_image(TemplateId::QaRewrite, image_ref)?;
    TemplateId::QaRewrite
        .template()
        .build(Some(text), Some(image))
}

pub fn build_modification_prompt(query_text: &str) -> Result<PromptMessage> {
    let text = require_text(TemplateId::Modification, query_text)?;
    TemplateId::Modification.template().build(Some(text), None)
}

pub const CORPUS_CAPTION: &str = r#"Task: Generate a precise, keyword-rich text entry based on the [Image].

Instructions:
1. Subject First: Identify the main object, entity, or scene layout immediately.
2. Distinctive Features: List specific details: colors, materials, text/logos (if visible), and unique shapes. If a detail doesn't exist, don't mention it (no stating 'no visible logos or text').
3. Entity Recognition: If the object is a named entity (e.g., 'Eiffel Tower', 'Toyota Camry', 'Nike'), state it.
4. Viewpoint: Mention the angle (e.g., 'close-up', 'aerial', 'profile') ONLY IF it distinguishes the image.
5. No Filler: Do not use aesthetic words (e.g., 'beautiful', 'cinematic'). Focus on factual visual content.
6. Length: Maximum 100 words.

Reference Image: <image>
Output:"#;

pub const QUERY_CAPTION: &str = r#"Task: Generate a precise, keyword-rich text entry based on the [Image].

Instructions:
1. Subject First: Identify the main object, entity, or scene layout immediately.
2. Distinctive Features: List specific details: colors, materials, text/logos (if visible), and unique shapes. If a detail doesn't exist, don't mention it (no stating 'no visible logos or text').
3. Entity Recognition: If the object is a named entity (e.g., 'Eiffel Tower', 'Toyota Camry', 'Nike'), state it.
4. Viewpoint: Mention the angle (e.g., 'close-up', 'aerial', 'profile') ONLY IF it distinguishes the image.
5. No Filler: Do not use aesthetic words (e.g., 'beautiful', 'cinematic'). Focus on factual visual content.
6. Length: Maximum 50 words.

Reference Image: <image>
Output:"#;

pub const QA_REWRITE: &str = r#"Task: Rewrite the user's question by integrating the visual subject.
Goal: Create a search query that matches text documents. Keep it extremely concise.

Strict Constraint Rules:
1. Length Limit: The added visual description must be MAX 3-5 words. No long sentences.
2. The 'Specific vs. Generic' Split:
   - If Unique Entity (Landmark, Art, Car Model): Use the NAME only. Delete all visual adjectives.
     - BAD: 'Who built this tall iron tower?'
     - GOOD: 'Who built the Eiffel Tower?'
   - If Generic Object (Food, Plant, Animal): Use [Dominant Color/Material] + [Broad Category].
     - BAD: 'What is this delicious spicy red soup with shrimp?' (Too many distractors)
     - GOOD: 'What is this red noodle soup with shrimp?' (Anchors only)
3. No 'Filler' Adjectives: Banned words: 'beautiful', 'large', 'small', 'generic', 'distinct', 'looking', 'shaped'.
4. No Environment: Never mention background, weather, or lighting.
5. Zero-Leakage: NEVER answer the question yourself. YOU ARE ONLY REWRITING THE QUERY.

Examples:
Input: [Photo of Giant Panda] | Query: 'When was it discovered?'
Output: When was the Giant Panda discovered?
(Reason: Named entity. No adjectives needed.)

Input: [Photo of Yellowjacket Wasp] | Query: 'What species is this?'
Output: What species is this black and yellow wasp?
(Reason: 'Black and yellow' distinguishes it. 'Insect' is too broad, 'Wasp' is better.)

Input: [Photo of Red Laksa Soup] | Query: 'What dish is this?'
Output: What dish is this red noodle soup with shrimp?
(Reason: 'Red', 'Noodle', 'Shrimp' are the only keys needed to find the recipe.)

Input: [Photo of Blue Ford Focus] | Query: 'What car is this?'
Output: What car is this blue hatchback?
(Reason: 'Blue' and 'Hatchback' filter the candidates. 'Ford Focus' might be a hallucination, so we play it safe. We also don't want to leak the answer.)

Input: [Photo of Melting Clock Painting] | Query: 'Who painted this?'
Output: Who painted The Persistence of Memory?
(Reason: Unique Art -> Specific Name.)

Current Task:
Query: {query_txt}
Input Image: <image>
Output:"#;

pub const MODIFICATION: &str = r#"Task: Extract the key semantic phrases describing the TARGET image. Remove conversational filler and grammar words.
Input: User Query (describing a change or a target attribute).

Strict Reduction Rules:
1. Delete Filler Verbs: Remove 'Is', 'Has', 'Make', 'Change', 'Show', 'Put', 'Be'.
2. Delete Pronouns/Articles: Remove 'it', 'the', 'a', 'an', 'my', 'me', 'them', 'this'.
3. Preserve Adjectives & Nouns: Keep ALL descriptors (colors, patterns, objects). If the user says 'Is white', output 'White'.
4. Preserve Prepositions: Keep 'with', 'on', 'in', 'without' to maintain spatial/compositional logic.

Note: There are cases where the original query is concise enough, and you might not have to change anything.

Examples:
Input: 'Is shiny and silver with shorter sleeves.'
Output: Shiny silver with shorter sleeves

Input: 'Is white in color with short sleeves and is more plain.'
Output: White, short sleeves, more plain

Input: 'Remove the lemon.'
Output: Remove lemon

Input: 'Make the needle upside down in the hand.'
Output: Needle upside down in hand

Input: 'Human and one animal from a different species.'
Output: Human and animal from different species

Input: 'Is a plain white feminine t shirt and is a tan shirt.'
Output: Plain white feminine t-shirt and tan shirt

Input: 'Remove all cheetahs.'
Output: Remove all cheetahs

Input: 'Remove one cheetah.'
Output: Remove one cheetah.

Input: 'Remove green from the background.'
Output: Remove green from background.

Current Input: {query_txt}
Output:"#;
