//! Canonical domain model: locales, the PII type registry, category mapping,
//! label normalisation and annotation validity.
//!
//! Reference data lives in tab-separated tables under `data/` and is compiled
//! into [`Registry::builtin`]. Alternative tables can be loaded with
//! [`Registry::from_tables`].
//!
//! All span offsets are counted in Unicode scalar values (Rust `char`s),
//! zero-based and end-exclusive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const TYPES_TSV: &str = include_str!("../data/types.tsv");
const ALIASES_TSV: &str = include_str!("../data/aliases.tsv");
const LOCALES_TSV: &str = include_str!("../data/locales.tsv");
const REGISTRY_TSV: &str = include_str!("../data/registry.tsv");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("empty PII label")]
    EmptyLabel,
    #[error("unknown PII label {0:?}")]
    UnknownLabel(String),
    #[error("malformed locale code {0:?}")]
    InvalidLocale(String),
    #[error("unknown locale {0:?}")]
    UnknownLocale(String),
    #[error("{table}:{line}: {message}")]
    Table {
        table: &'static str,
        line: usize,
        message: String,
    },
}

/// Why an annotation was rejected by [`Registry::validate_annotation`].
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("span [{start},{end}) is invalid for a prompt of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("annotation text {found:?} does not match prompt slice {expected:?}")]
    TextMismatch { expected: String, found: String },
    #[error("type {pii_type} is not registered for locale {locale}")]
    TypeNotInLocale { pii_type: String, locale: String },
    #[error("unknown locale {0}")]
    UnknownLocale(String),
}

impl Violation {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::SpanOutOfBounds { .. } => "span_out_of_bounds",
            Violation::TextMismatch { .. } => "text_mismatch",
            Violation::TypeNotInLocale { .. } => "type_not_in_locale",
            Violation::UnknownLocale(_) => "unknown_locale",
        }
    }
}

fn locale_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z]{2}-[A-Z]{2,3}$").expect("static regex"))
}

/// A language-region tag such as `pl-PL` or `ar-UAE`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Locale(String);

impl Locale {
    pub fn parse(code: &str) -> Result<Self, ModelError> {
        if locale_pattern().is_match(code) {
            Ok(Locale(code.to_string()))
        } else {
            Err(ModelError::InvalidLocale(code.to_string()))
        }
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    /// The language subtag (`pl` for `pl-PL`).
    pub fn language(&self) -> &str {
        self.0.split('-').next().unwrap_or(&self.0)
    }
}

impl TryFrom<String> for Locale {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Locale::parse(&value)
    }
}

impl From<Locale> for String {
    fn from(value: Locale) -> Self {
        value.0
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical PII type name, e.g. `NAME` or `AWS SECRET KEY`.
///
/// Values are only minted by a [`Registry`], so holding one means the label
/// already went through normalisation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PiiTypeId(String);

impl PiiTypeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PiiTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One of the merged reporting categories.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PiiCategory(String);

impl PiiCategory {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeInfo {
    pub id: PiiTypeId,
    pub category: PiiCategory,
    pub locale_specific: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocaleInfo {
    pub locale: Locale,
    pub group: String,
    pub aliases: Vec<String>,
    pub name: String,
}

/// A (locale, type) pair of the locale registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub locale: Locale,
    pub pii_type: PiiTypeId,
    pub locale_specific: bool,
    pub template_id: String,
}

/// Half-open character interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Length in characters; zero for inverted spans.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_valid_for(&self, prompt_len: usize) -> bool {
        self.start < self.end && self.end <= prompt_len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// One labelled PII occurrence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SpanAnnotation {
    pub span: Span,
    pub pii_type: PiiTypeId,
    pub text: String,
}

impl SpanAnnotation {
    pub fn new(span: Span, pii_type: PiiTypeId, text: impl Into<String>) -> Self {
        SpanAnnotation {
            span,
            pii_type,
            text: text.into(),
        }
    }
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// The substring covered by `span`, or `None` when the span does not fit.
pub fn char_slice(text: &str, span: Span) -> Option<&str> {
    if span.start > span.end {
        return None;
    }
    // byte offset of every char boundary, including the end of the text
    let mut boundaries = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()));
    let start = boundaries.nth(span.start)?;
    let end = if span.end == span.start {
        start
    } else {
        boundaries.nth(span.end - span.start - 1)?
    };
    Some(&text[start..end])
}

/// Trim, uppercase and collapse internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_uppercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reference data: types, categories, aliases, locales and the per-locale
/// registry.
#[derive(Debug, Clone)]
pub struct Registry {
    types: BTreeMap<PiiTypeId, TypeInfo>,
    aliases: BTreeMap<String, PiiTypeId>,
    locales: BTreeMap<Locale, LocaleInfo>,
    locale_aliases: BTreeMap<String, Locale>,
    entries: BTreeMap<Locale, BTreeMap<PiiTypeId, RegistryEntry>>,
}

fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
}

fn parse_flag(table: &'static str, line: usize, raw: &str) -> Result<bool, ModelError> {
    match raw.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ModelError::Table {
            table,
            line,
            message: format!("expected true/false, found {other:?}"),
        }),
    }
}

impl Registry {
    /// The registry compiled from the bundled tables.
    pub fn builtin() -> &'static Registry {
        static BUILTIN: OnceLock<Registry> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Registry::from_tables(TYPES_TSV, ALIASES_TSV, LOCALES_TSV, REGISTRY_TSV)
                .expect("bundled reference tables are well-formed")
        })
    }

    /// Build a registry from the four tab-separated tables.
    pub fn from_tables(
        types_tsv: &str,
        aliases_tsv: &str,
        locales_tsv: &str,
        registry_tsv: &str,
    ) -> Result<Self, ModelError> {
        let mut types = BTreeMap::new();
        for (line, cols) in rows(types_tsv) {
            if cols.len() < 3 {
                return Err(ModelError::Table {
                    table: "types",
                    line,
                    message: "expected type, category, locale_specific".into(),
                });
            }
            let id = PiiTypeId(normalize_label(cols[0]));
            let info = TypeInfo {
                id: id.clone(),
                category: PiiCategory(normalize_label(cols[1])),
                locale_specific: parse_flag("types", line, cols[2])?,
                description: cols.get(3).unwrap_or(&"").trim().to_string(),
            };
            if types.insert(id.clone(), info).is_some() {
                return Err(ModelError::Table {
                    table: "types",
                    line,
                    message: format!("duplicate type {id}"),
                });
            }
        }

        let mut aliases = BTreeMap::new();
        for (line, cols) in rows(aliases_tsv) {
            if cols.len() < 2 {
                return Err(ModelError::Table {
                    table: "aliases",
                    line,
                    message: "expected alias, canonical".into(),
                });
            }
            let target = PiiTypeId(normalize_label(cols[1]));
            if !types.contains_key(&target) {
                return Err(ModelError::Table {
                    table: "aliases",
                    line,
                    message: format!("alias target {target} is not a registered type"),
                });
            }
            aliases.insert(normalize_label(cols[0]), target);
        }

        let mut locales = BTreeMap::new();
        let mut locale_aliases = BTreeMap::new();
        for (line, cols) in rows(locales_tsv) {
            let table_err = |message: String| ModelError::Table {
                table: "locales",
                line,
                message,
            };
            let locale = Locale::parse(cols[0].trim()).map_err(|e| table_err(e.to_string()))?;
            let group = cols
                .get(1)
                .map(|g| g.trim())
                .filter(|g| !g.is_empty())
                .unwrap_or_else(|| locale.language())
                .to_string();
            let alias_list: Vec<String> = cols
                .get(2)
                .map(|a| {
                    a.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            for alias in &alias_list {
                locale_aliases.insert(alias.clone(), locale.clone());
            }
            locales.insert(
                locale.clone(),
                LocaleInfo {
                    locale,
                    group,
                    aliases: alias_list,
                    name: cols.get(3).unwrap_or(&"").trim().to_string(),
                },
            );
        }

        let mut entries: BTreeMap<Locale, BTreeMap<PiiTypeId, RegistryEntry>> = BTreeMap::new();
        for (line, cols) in rows(registry_tsv) {
            let table_err = |message: String| ModelError::Table {
                table: "registry",
                line,
                message,
            };
            if cols.len() < 4 {
                return Err(table_err(
                    "expected locale, type, locale_specific, template_id".into(),
                ));
            }
            let locale = Locale::parse(cols[0].trim()).map_err(|e| table_err(e.to_string()))?;
            if !locales.contains_key(&locale) {
                return Err(table_err(format!("locale {locale} is not configured")));
            }
            let pii_type = PiiTypeId(normalize_label(cols[1]));
            let Some(info) = types.get(&pii_type) else {
                return Err(table_err(format!("type {pii_type} is not registered")));
            };
            let locale_specific = parse_flag("registry", line, cols[2])?;
            if locale_specific != info.locale_specific {
                return Err(table_err(format!(
                    "locale_specific flag for {pii_type} disagrees with the type table"
                )));
            }
            entries.entry(locale.clone()).or_default().insert(
                pii_type.clone(),
                RegistryEntry {
                    locale,
                    pii_type,
                    locale_specific,
                    template_id: cols[3].trim().to_string(),
                },
            );
        }

        Ok(Registry {
            types,
            aliases,
            locales,
            locale_aliases,
            entries,
        })
    }

    /// Normalise a raw label and resolve it to a canonical type.
    pub fn canonical_type(&self, raw_label: &str) -> Result<PiiTypeId, ModelError> {
        let norm = normalize_label(raw_label);
        if norm.is_empty() {
            return Err(ModelError::EmptyLabel);
        }
        let id = PiiTypeId(norm);
        if self.types.contains_key(&id) {
            return Ok(id);
        }
        self.aliases
            .get(&id.0)
            .cloned()
            .ok_or(ModelError::UnknownLabel(raw_label.to_string()))
    }

    /// Shorthand for a known canonical name. Panics on unknown names, so
    /// it is meant for fixtures and constants.
    pub fn ty(&self, name: &str) -> PiiTypeId {
        self.canonical_type(name)
            .unwrap_or_else(|_| panic!("{name:?} is not a registered PII type"))
    }

    pub fn type_info(&self, id: &PiiTypeId) -> Option<&TypeInfo> {
        self.types.get(id)
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeInfo> {
        self.types.values()
    }

    pub fn aliases(&self) -> &BTreeMap<String, PiiTypeId> {
        &self.aliases
    }

    /// Category of a canonical type. `None` only for ids minted by a
    /// different registry.
    pub fn category_of(&self, id: &PiiTypeId) -> Option<&PiiCategory> {
        self.types.get(id).map(|t| &t.category)
    }

    pub fn categories(&self) -> BTreeSet<&PiiCategory> {
        self.types.values().map(|t| &t.category).collect()
    }

    /// Resolve a locale code, following configured aliases (`ar-AFB` is
    /// the same locale as `ar-UAE`).
    pub fn resolve_locale(&self, code: &str) -> Result<Locale, ModelError> {
        if let Some(l) = self.locale_aliases.get(code) {
            return Ok(l.clone());
        }
        let locale = Locale::parse(code)?;
        if self.locales.contains_key(&locale) {
            Ok(locale)
        } else {
            Err(ModelError::UnknownLocale(code.to_string()))
        }
    }

    pub fn locales(&self) -> impl Iterator<Item = &LocaleInfo> {
        self.locales.values()
    }

    pub fn locale_info(&self, locale: &Locale) -> Option<&LocaleInfo> {
        self.locales.get(locale)
    }

    /// Reporting group of a locale (`nl` for both `nl-BE` and `nl-NL`).
    pub fn group_of<'a>(&'a self, locale: &'a Locale) -> &'a str {
        self.locales
            .get(locale)
            .map(|l| l.group.as_str())
            .unwrap_or_else(|| locale.language())
    }

    /// Override the group of a locale (config-driven merges).
    pub fn set_group(&mut self, locale: &Locale, group: &str) -> Result<(), ModelError> {
        let info = self
            .locales
            .get_mut(locale)
            .ok_or_else(|| ModelError::UnknownLocale(locale.to_string()))?;
        info.group = group.to_string();
        Ok(())
    }

    /// PII types valid for `locale`.
    pub fn registry_for(&self, locale: &Locale) -> Result<BTreeSet<PiiTypeId>, ModelError> {
        if !self.locales.contains_key(locale) {
            return Err(ModelError::UnknownLocale(locale.to_string()));
        }
        Ok(self
            .entries
            .get(locale)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default())
    }

    pub fn entry(&self, locale: &Locale, pii_type: &PiiTypeId) -> Option<&RegistryEntry> {
        self.entries.get(locale).and_then(|m| m.get(pii_type))
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values().flat_map(|m| m.values())
    }

    pub fn is_registered(&self, locale: &Locale, pii_type: &PiiTypeId) -> bool {
        self.entry(locale, pii_type).is_some()
    }

    /// Per-locale entry counts plus the total, as a TSV document.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# piiqa registry manifest v1\n# locale\tentries\n");
        let mut total = 0;
        for locale in self.locales.keys() {
            let n = self.entries.get(locale).map_or(0, BTreeMap::len);
            total += n;
            out.push_str(&format!("{locale}\t{n}\n"));
        }
        out.push_str(&format!("TOTAL\t{total}\n"));
        out
    }

    /// Check bounds, text/slice equality and locale membership.
    pub fn validate_annotation(
        &self,
        prompt: &str,
        ann: &SpanAnnotation,
        locale: &Locale,
    ) -> Result<(), Violation> {
        let len = char_len(prompt);
        if !ann.span.is_valid_for(len) {
            return Err(Violation::SpanOutOfBounds {
                start: ann.span.start,
                end: ann.span.end,
                len,
            });
        }
        let slice = char_slice(prompt, ann.span).expect("bounds checked");
        if slice != ann.text {
            return Err(Violation::TextMismatch {
                expected: slice.to_string(),
                found: ann.text.clone(),
            });
        }
        if !self.locales.contains_key(locale) {
            return Err(Violation::UnknownLocale(locale.to_string()));
        }
        if !self.is_registered(locale, &ann.pii_type) {
            return Err(Violation::TypeNotInLocale {
                pii_type: ann.pii_type.to_string(),
                locale: locale.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> &'static Registry {
        Registry::builtin()
    }

    fn pl() -> Locale {
        Locale::parse("pl-PL").unwrap()
    }

    #[test]
    fn canonical_type_normalises_case_and_whitespace() {
        assert_eq!(reg().canonical_type(" ssn ").unwrap().as_str(), "SSN");
        assert_eq!(
            reg().canonical_type("aws   secret\tkey").unwrap().as_str(),
            "AWS SECRET KEY"
        );
    }

    #[test]
    fn canonical_type_applies_aliases() {
        assert_eq!(reg().canonical_type("CVV").unwrap().as_str(), "CREDIT DEBIT CVV");
        assert_eq!(
            reg().canonical_type("credit/debit number").unwrap().as_str(),
            "CREDIT DEBIT NUMBER"
        );
    }

    #[test]
    fn canonical_type_rejects_unknown_and_empty() {
        assert_eq!(
            reg().canonical_type("FROBNICATOR ID"),
            Err(ModelError::UnknownLabel("FROBNICATOR ID".into()))
        );
        assert_eq!(reg().canonical_type("   "), Err(ModelError::EmptyLabel));
    }

    #[test]
    fn canonical_type_is_idempotent_over_registry_and_aliases() {
        let r = reg();
        let labels: Vec<String> = r
            .types()
            .map(|t| t.id.to_string())
            .chain(r.aliases().keys().cloned())
            .collect();
        for label in labels {
            let once = r.canonical_type(&label).unwrap();
            assert_eq!(r.canonical_type(once.as_str()).unwrap(), once);
        }
    }

    #[test]
    fn category_examples() {
        let r = reg();
        assert_eq!(r.category_of(&r.ty("TIN")).unwrap().as_str(), "TAX NUMBER");
        assert_eq!(r.category_of(&r.ty("MAC ADDRESS")).unwrap().as_str(), "IP ADDRESS");
        assert_eq!(r.category_of(&r.ty("ADDRESS")).unwrap().as_str(), "ADDRESS");
        assert_eq!(r.category_of(&r.ty("PAN ID")).unwrap().as_str(), "TAX NUMBER");
        assert_eq!(r.category_of(&r.ty("AADHAR ID")).unwrap().as_str(), "NATIONAL ID");
    }

    #[test]
    fn category_mapping_is_total_and_has_eighteen_categories() {
        let r = reg();
        for t in r.types() {
            assert!(r.category_of(&t.id).is_some());
        }
        assert_eq!(r.categories().len(), 18);
    }

    #[test]
    fn starred_types_are_locale_specific() {
        let r = reg();
        let starred = [
            "BANK ACCOUNT NUMBER",
            "BANK ROUTING",
            "DRIVER ID",
            "HEALTH ID",
            "LICENSE PLATE",
            "NATIONAL ID",
            "PASSPORT NUMBER",
            "SSN",
            "TIN",
        ];
        for t in r.types() {
            if ["AADHAR ID", "PAN ID"].contains(&t.id.as_str()) {
                continue;
            }
            assert_eq!(
                t.locale_specific,
                starred.contains(&t.id.as_str()),
                "{}",
                t.id
            );
        }
    }

    #[test]
    fn registry_for_examples() {
        let r = reg();
        let hi = r.registry_for(&Locale::parse("hi-IN").unwrap()).unwrap();
        assert!(hi.contains(&r.ty("AADHAR ID")) && hi.contains(&r.ty("PAN ID")));
        let pl = r.registry_for(&pl()).unwrap();
        for t in ["NATIONAL ID", "SSN", "TIN"] {
            assert!(pl.contains(&r.ty(t)));
        }
        assert!(!pl.contains(&r.ty("AADHAR ID")));
        assert_eq!(
            r.registry_for(&Locale::parse("en-XX").unwrap()),
            Err(ModelError::UnknownLocale("en-XX".into()))
        );
    }

    #[test]
    fn registry_cardinality_matches_manifest() {
        let r = reg();
        assert_eq!(r.locales().count(), 13);
        let total: usize = r
            .locales()
            .map(|l| r.registry_for(&l.locale).unwrap().len())
            .sum();
        assert!((300..=380).contains(&total), "{total}");
        assert_eq!(r.manifest(), include_str!("../data/registry_manifest.tsv"));
    }

    #[test]
    fn locale_aliases_and_groups() {
        let r = reg();
        assert_eq!(r.resolve_locale("ar-AFB").unwrap().code(), "ar-UAE");
        assert_eq!(r.resolve_locale("vi-VI").unwrap().code(), "vi-VN");
        let nl_be = r.resolve_locale("nl-BE").unwrap();
        let nl_nl = r.resolve_locale("nl-NL").unwrap();
        assert_eq!(r.group_of(&nl_be), "nl");
        assert_eq!(r.group_of(&nl_nl), "nl");
        assert!(Locale::parse("pl_PL").is_err());
        assert!(Locale::parse("PL-pl").is_err());
    }

    #[test]
    fn validate_annotation_examples() {
        let r = reg();
        let name = r.ty("NAME");
        let prompt = "Jan Kowalski";
        let ok = SpanAnnotation::new(Span::new(0, 12), name.clone(), "Jan Kowalski");
        assert_eq!(r.validate_annotation(prompt, &ok, &pl()), Ok(()));

        let short = SpanAnnotation::new(Span::new(0, 12), name.clone(), "Jan");
        assert!(matches!(
            r.validate_annotation(prompt, &short, &pl()),
            Err(Violation::TextMismatch { .. })
        ));

        let inverted = SpanAnnotation::new(Span::new(5, 3), name.clone(), "");
        assert!(matches!(
            r.validate_annotation(prompt, &inverted, &pl()),
            Err(Violation::SpanOutOfBounds { .. })
        ));

        let past_end = SpanAnnotation::new(Span::new(4, 13), name, "Kowalski");
        assert!(matches!(
            r.validate_annotation(prompt, &past_end, &pl()),
            Err(Violation::SpanOutOfBounds { .. })
        ));

        let aadhar = SpanAnnotation::new(Span::new(0, 3), r.ty("AADHAR ID"), "Jan");
        assert!(matches!(
            r.validate_annotation(prompt, &aadhar, &pl()),
            Err(Violation::TypeNotInLocale { .. })
        ));
    }

    #[test]
    fn offsets_are_unicode_scalar_values() {
        let prompt = "客户 王伟 付款";
        assert_eq!(char_len(prompt), 8);
        assert_eq!(char_slice(prompt, Span::new(3, 5)), Some("王伟"));
        assert_eq!(char_slice(prompt, Span::new(6, 8)), Some("付款"));
        assert_eq!(char_slice(prompt, Span::new(6, 9)), None);
        assert_eq!(char_slice("", Span::new(0, 0)), Some(""));
        let hindi = "नाम राहुल शर्मा";
        let start = 4;
        let end = char_len(hindi);
        assert_eq!(char_slice(hindi, Span::new(start, end)), Some("राहुल शर्मा"));
    }
}
