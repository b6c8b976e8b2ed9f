//! Paired (image, prompt) datasets and the corpus builders.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::scene::{render, Content, Mention, PatternSpec, SceneSpec};
use crate::data::style::{StyleName, StyleTransformSpec};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::prompt::{tokenize, PromptSpec, AUX_TEMPLATE, BACKGROUND_TEMPLATE, STYLEREF_TEMPLATE};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    StyleRef,
    Aux,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContentKind {
    Person,
    Background,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Procedural,
    Generated,
    Ingested,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $s:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $s),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$variant),)*
                    _ => Err(invalid!("unknown {} `{}`", stringify!($ty), s)),
                }
            }
        }
    };
}

string_enum!(Role { StyleRef => "styleref", Aux => "aux" });
string_enum!(ContentKind { Person => "person", Background => "background", Mixed => "mixed" });
string_enum!(Provenance { Procedural => "procedural", Generated => "generated", Ingested => "ingested" });

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image: Image,
    pub prompt: PromptSpec,
    pub role: Role,
    pub content_kind: ContentKind,
    /// Person pixels (1024 values in `{0, 1}`) when the renderer knows them.
    pub person_mask: Option<Vec<f64>>,
}

impl Record {
    /// Checks that the prompt matches the role: reference records carry an
    /// identifier, auxiliary records the bare `style` word and no identifier.
    pub fn check_role(&self) -> Result<()> {
        match self.role {
            Role::StyleRef if !self.prompt.has_identifier() => Err(Error::Configuration(format!(
                "styleref record prompt `{}` has no identifier token",
                self.prompt.text()
            ))),
            Role::Aux if self.prompt.has_identifier() || !self.prompt.mentions_style() => {
                Err(Error::Configuration(format!(
                    "aux record prompt `{}` must contain `style` and no identifier",
                    self.prompt.text()
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleDataset {
    pub style_id: String,
    pub provenance: Provenance,
    records: Vec<Record>,
}

impl StyleDataset {
    /// Validates prompt/role consistency of every record.
    pub fn new(style_id: impl Into<String>, provenance: Provenance, records: Vec<Record>) -> Result<Self> {
        for r in &records {
            r.check_role()?;
        }
        Ok(Self { style_id: style_id.into(), provenance, records })
    }

    pub fn empty(style_id: impl Into<String>, provenance: Provenance) -> Self {
        Self { style_id: style_id.into(), provenance, records: Vec::new() }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> &Record {
        &self.records[i]
    }

    pub fn images(&self) -> Vec<Image> {
        self.records.iter().map(|r| r.image.clone()).collect()
    }

    /// Errors unless the dataset is non-empty and every record has `role`.
    pub fn require_role(&self, role: Role) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Configuration(format!("dataset `{}` is empty", self.style_id)));
        }
        if let Some(r) = self.records.iter().find(|r| r.role != role) {
            return Err(Error::Configuration(format!(
                "dataset `{}` has a {} record where {} is required",
                self.style_id, r.role, role
            )));
        }
        Ok(())
    }

    pub fn filter_kind(&self, kind: ContentKind) -> Self {
        Self {
            style_id: self.style_id.clone(),
            provenance: self.provenance,
            records: self.records.iter().filter(|r| r.content_kind == kind).cloned().collect(),
        }
    }

    /// Every record re-captioned with `template`.
    pub fn with_prompt(&self, template: &str) -> Result<Self> {
        let prompt = tokenize(template)?;
        let records = self.records.iter().map(|r| Record { prompt: prompt.clone(), ..r.clone() }).collect();
        Self::new(self.style_id.clone(), self.provenance, records)
    }

    /// Person records captioned with `[V]` and background records with `[W]`,
    /// the two components of the multi-token setup.
    pub fn split_persons_backgrounds(&self) -> Result<(Self, Self)> {
        let persons = self.filter_kind(ContentKind::Person).with_prompt(STYLEREF_TEMPLATE)?;
        let backgrounds = self.filter_kind(ContentKind::Background).with_prompt(BACKGROUND_TEMPLATE)?;
        Ok((persons, backgrounds))
    }

    /// FNV-1a over identifiers, prompts and image bytes.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.style_id.as_bytes());
        eat(self.provenance.as_str().as_bytes());
        for r in &self.records {
            eat(r.prompt.text().as_bytes());
            eat(r.role.as_str().as_bytes());
            eat(r.content_kind.as_str().as_bytes());
            for v in r.image.tensor().data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

fn record(content: &Content, style: &StyleTransformSpec, prompt: &PromptSpec, role: Role, kind: ContentKind) -> Record {
    let (base, mask) = render(content);
    Record { image: style.apply(&base).quantized(), prompt: prompt.clone(), role, content_kind: kind, person_mask: Some(mask) }
}

/// Reference images of the target style: `n_persons` people scenes followed
/// by `n_backgrounds` landscapes, all captioned `a photo of [V] style`.
pub fn build_style_corpus(
    style: &StyleTransformSpec,
    n_persons: usize,
    n_backgrounds: usize,
    seed: u64,
) -> Result<StyleDataset> {
    if n_persons + n_backgrounds == 0 {
        return Err(invalid!("a style corpus needs at least one image"));
    }
    let prompt = tokenize(STYLEREF_TEMPLATE)?;
    let mut persons = rng::derive(seed, "styleref-persons");
    let mut backgrounds = rng::derive(seed, "styleref-backgrounds");
    let mut records = Vec::with_capacity(n_persons + n_backgrounds);
    for _ in 0..n_persons {
        let c = Content::Scene(SceneSpec::random_person(&mut persons));
        records.push(record(&c, style, &prompt, Role::StyleRef, ContentKind::Person));
    }
    for _ in 0..n_backgrounds {
        let c = Content::Scene(SceneSpec::random_background(&mut backgrounds));
        records.push(record(&c, style, &prompt, Role::StyleRef, ContentKind::Background));
    }
    StyleDataset::new(style.style_id(), Provenance::Procedural, records)
}

/// People scenes in the auxiliary style, captioned `a photo of style`.
pub fn build_aux_corpus(aux_style: &StyleTransformSpec, n: usize, seed: u64) -> Result<StyleDataset> {
    if n == 0 {
        return Err(invalid!("an aux corpus needs at least one image"));
    }
    let prompt = tokenize(AUX_TEMPLATE)?;
    let mut r = rng::derive(seed, "aux-persons");
    let records = (0..n)
        .map(|_| {
            let c = Content::Scene(SceneSpec::random_person(&mut r));
            record(&c, aux_style, &prompt, Role::Aux, ContentKind::Person)
        })
        .collect();
    StyleDataset::new(aux_style.style_id(), Provenance::Procedural, records)
}

/// A captioned image of the unstyled base corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedImage {
    pub image: Image,
    pub prompt: PromptSpec,
    /// Content phrase without any template, e.g. `a woman in red`.
    pub content: String,
}

/// Pretraining corpus in the plain photographic rendering: 40% people,
/// 40% landscapes and 20% fabric patterns. Most patterns are captioned with
/// the bare `a photo of style`, so the untuned model associates `style` with
/// fashion patterns rather than with people.
pub fn build_base_corpus(n: usize, seed: u64) -> Result<Vec<CaptionedImage>> {
    let realism = StyleTransformSpec::new(StyleName::RealismAnalog);
    let mut r = rng::derive(seed, "base-corpus");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (content, phrase, caption) = match i % 5 {
            0 | 1 => {
                let s = SceneSpec::random_person(&mut r);
                let mention = if rng::uniform(&mut r) < 0.5 { Mention::Subject } else { Mention::Everything };
                let phrase = s.phrase(mention);
                (Content::Scene(s), phrase.clone(), format!("a photo of {phrase}"))
            }
            2 | 3 => {
                let s = SceneSpec::random_background(&mut r);
                let phrase = s.phrase(Mention::Subject);
                (Content::Scene(s), phrase.clone(), format!("a photo of {phrase}"))
            }
            _ => {
                let p = PatternSpec::random(&mut r);
                let phrase = p.phrase();
                let u = rng::uniform(&mut r);
                let caption = if u < 0.6 {
                    AUX_TEMPLATE.to_string()
                } else if u < 0.8 {
                    format!("a photo of {phrase}")
                } else {
                    format!("fashion fabric with {phrase}")
                };
                (Content::Pattern(p), phrase, caption)
            }
        };
        let (img, _) = render(&content);
        out.push(CaptionedImage { image: realism.apply(&img).quantized(), prompt: tokenize(&caption)?, content: phrase });
    }
    Ok(out)
}
