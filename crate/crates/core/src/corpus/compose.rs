use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FactCheck, LangTuple, Post};
use crate::error::Error;

/// Which text variants are concatenated into model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompositionPlan {
    /// Original text only.
    O,
    /// Machine translation only.
    T,
    /// Originals followed by translations.
    #[serde(alias = "O,T")]
    OT,
    /// `OT` plus the post's verdict strings. Fact-checks have no verdicts.
    #[serde(alias = "O,T,V")]
    OTV,
}

impl CompositionPlan {
    pub const ALL: [CompositionPlan; 4] = [Self::O, Self::T, Self::OT, Self::OTV];

    pub fn label(self) -> &'static str {
        match self {
            Self::O => "O",
            Self::T => "T",
            Self::OT => "O,T",
            Self::OTV => "O,T,V",
        }
    }
}

impl fmt::Display for CompositionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CompositionPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key: String = s.chars().filter(|c| !c.is_whitespace() && *c != ',' && *c != '+').collect();
        match key.to_ascii_uppercase().as_str() {
            "O" => Ok(Self::O),
            "T" => Ok(Self::T),
            "OT" => Ok(Self::OT),
            "OTV" => Ok(Self::OTV),
            _ => Err(Error::Config(format!("unknown composition plan `{s}`"))),
        }
    }
}

/// Composes post and fact-check text for a plan.
///
/// Layout: posts emit `text` then each `ocr` entry; fact-checks emit `claim`
/// then `title`. `OT` emits every original first, then every translation.
/// Non-empty parts are joined with a single space.
///
/// When a translation is missing, plan `T` falls back to the original unless
/// `strict` is set. Plans that already include the original skip the missing
/// translation instead of repeating the original.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composer {
    pub plan: CompositionPlan,
    pub strict: bool,
}

impl Composer {
    pub fn new(plan: CompositionPlan) -> Self {
        Self { plan, strict: false }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    fn compose<'a>(&self, slots: &[&'a LangTuple], extra: &'a [String]) -> String {
        let mut parts: Vec<&str> = Vec::new();
        let with_original = self.plan != CompositionPlan::T;
        if with_original {
            parts.extend(slots.iter().map(|t| t.original.as_str()));
        }
        if self.plan != CompositionPlan::O {
            for t in slots {
                match t.translation.as_deref() {
                    Some(tr) => parts.push(tr),
                    None if !with_original && !self.strict => parts.push(&t.original),
                    None => {}
                }
            }
        }
        if self.plan == CompositionPlan::OTV {
            parts.extend(extra.iter().map(String::as_str));
        }
        let mut out = String::new();
        for p in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(p);
        }
        out
    }

    pub fn post(&self, post: &Post) -> String {
        let slots: Vec<&LangTuple> = post.text.iter().chain(post.ocr.iter()).collect();
        self.compose(&slots, &post.verdicts)
    }

    pub fn fact_check(&self, fc: &FactCheck) -> String {
        let slots: Vec<&LangTuple> = std::iter::once(&fc.claim).chain(fc.title.iter()).collect();
        self.compose(&slots, &[])
    }
}

/// Compose a post with translation fallback enabled. An empty result means
/// the post has no usable text under this plan.
pub fn compose_post_text(post: &Post, plan: CompositionPlan) -> String {
    Composer::new(plan).post(post)
}

pub fn compose_fact_check_text(fc: &FactCheck, plan: CompositionPlan) -> String {
    Composer::new(plan).fact_check(fc)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn post() -> Post {
        Post {
            post_id: 1,
            ocr: vec![LangTuple::new("c", Some("d"))],
            text: Some(LangTuple::new("a", Some("b"))),
            verdicts: vec!["False.".into()],
            instances: String::new(),
        }
    }

    fn fc(claim: LangTuple, title: Option<LangTuple>) -> FactCheck {
        FactCheck {
            fact_check_id: 1,
            claim,
            title,
            instances: String::new(),
        }
    }

    #[test]
    fn post_layouts() {
        let p = post();
        assert_eq!(compose_post_text(&p, CompositionPlan::O), "a c");
        assert_eq!(compose_post_text(&p, CompositionPlan::T), "b d");
        assert_eq!(compose_post_text(&p, CompositionPlan::OT), "a c b d");
        assert_eq!(compose_post_text(&p, CompositionPlan::OTV), "a c b d False.");
    }

    #[test]
    fn fact_check_layouts() {
        let x = fc(LangTuple::new("x", Some("y")), None);
        assert_eq!(compose_fact_check_text(&x, CompositionPlan::T), "y");
        let x = fc(LangTuple::new("x", None), None);
        assert_eq!(compose_fact_check_text(&x, CompositionPlan::T), "x");
        let x = fc(LangTuple::new("x", Some("y")), Some(LangTuple::new("t", Some("u"))));
        assert_eq!(compose_fact_check_text(&x, CompositionPlan::OT), "x t y u");
        assert_eq!(compose_fact_check_text(&x, CompositionPlan::OTV), "x t y u");
    }

    #[test]
    fn strict_plan_disables_fallback() {
        let x = fc(LangTuple::new("x", None), None);
        assert_eq!(Composer::new(CompositionPlan::T).strict(true).fact_check(&x), "");
    }

    #[test]
    fn missing_translations_make_o_and_ot_coincide() {
        let mut p = post();
        p.text.as_mut().unwrap().translation = None;
        p.ocr[0].translation = None;
        assert_eq!(
            compose_post_text(&p, CompositionPlan::O),
            compose_post_text(&p, CompositionPlan::OT)
        );
    }

    #[test]
    fn plan_parsing() {
        assert_eq!("O,T".parse::<CompositionPlan>().unwrap(), CompositionPlan::OT);
        assert_eq!("o, t, v".parse::<CompositionPlan>().unwrap(), CompositionPlan::OTV);
        assert!("X".parse::<CompositionPlan>().is_err());
    }

    fn tuple_strategy(tag: &'static str) -> impl Strategy<Value = LangTuple> {
        ("[a-z]{1,6}", proptest::option::of("[a-z]{1,6}")).prop_map(move |(o, t)| {
            LangTuple::new(format!("ORIG{tag}{o}"), t.map(|t| format!("TRAN{tag}{t}")).as_deref())
        })
    }

    proptest! {
        #[test]
        fn plan_o_never_leaks_translation(
            text in proptest::option::of(tuple_strategy("x")),
            ocr in proptest::collection::vec(tuple_strategy("o"), 0..4),
        ) {
            let p = Post { post_id: 1, ocr, text, verdicts: vec!["VERD".into()], instances: String::new() };
            let o = compose_post_text(&p, CompositionPlan::O);
            prop_assert!(!o.contains("TRAN"));
            prop_assert!(!o.contains("VERD"));
            let ot = compose_post_text(&p, CompositionPlan::OT);
            prop_assert!(!ot.contains("VERD"));
            // Pure: same input, same bytes.
            prop_assert_eq!(ot, compose_post_text(&p.clone(), CompositionPlan::OT));
            let t = Composer::new(CompositionPlan::T).strict(true).post(&p);
            prop_assert!(!t.contains("ORIG"));
        }
    }
}
