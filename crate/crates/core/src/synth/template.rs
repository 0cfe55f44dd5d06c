//! Format templates: a small pattern language compiled both into a value
//! generator and, separately, into a regular-expression validator.
//!
//! | token      | meaning                          |
//! |------------|----------------------------------|
//! | `\d`       | digit                            |
//! | `\u`, `\l` | upper / lower case ASCII letter  |
//! | `\a`, `\A` | `[a-z0-9]` / `[A-Z0-9]`          |
//! | `\x`       | lower-case hex digit             |
//! | `\m`       | `[A-Za-z0-9]`                    |
//! | `[...]`    | character set, ranges allowed    |
//! | `<name>`   | word from the locale's list      |
//! | `{n}`      | repeat n times                   |
//! | `{m,n}`    | repeat m to n times              |
//!
//! A backslash before any other character makes it literal, as is every
//! other character.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use super::SynthError;
use crate::model::{Locale, PiiTypeId, Registry};

const TEMPLATES_TSV: &str = include_str!("../../data/templates.tsv");
const WORDLISTS_TSV: &str = include_str!("../../data/wordlists.tsv");

#[derive(Debug, Clone, PartialEq)]
enum Atom {
    Chars(Vec<char>),
    Words(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    atom: Atom,
    min: usize,
    max: usize,
}

fn class(c: char) -> Option<Vec<char>> {
    let range = |a: char, b: char| (a..=b).collect::<Vec<char>>();
    Some(match c {
        'd' => range('0', '9'),
        'u' => range('A', 'Z'),
        'l' => range('a', 'z'),
        'a' => [range('a', 'z'), range('0', '9')].concat(),
        'A' => [range('A', 'Z'), range('0', '9')].concat(),
        'x' => [range('0', '9'), range('a', 'f')].concat(),
        'm' => [range('A', 'Z'), range('a', 'z'), range('0', '9')].concat(),
        _ => return None,
    })
}

fn parse(pattern: &str) -> Result<Vec<Piece>, String> {
    let chars: Vec<char> = pattern.chars().collect();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let atom = match chars[i] {
            '\\' => {
                let c = *chars.get(i + 1).ok_or("dangling backslash")?;
                i += 2;
                Atom::Chars(class(c).unwrap_or_else(|| vec![c]))
            }
            '[' => {
                let close = chars[i..]
                    .iter()
                    .position(|&c| c == ']')
                    .ok_or("unclosed [")?
                    + i;
                let body = &chars[i + 1..close];
                let mut set = Vec::new();
                let mut j = 0;
                while j < body.len() {
                    if j + 2 < body.len() && body[j + 1] == '-' {
                        set.extend(body[j]..=body[j + 2]);
                        j += 3;
                    } else {
                        set.push(body[j]);
                        j += 1;
                    }
                }
                if set.is_empty() {
                    return Err("empty character set".into());
                }
                i = close + 1;
                Atom::Chars(set)
            }
            '<' => {
                let close = chars[i..]
                    .iter()
                    .position(|&c| c == '>')
                    .ok_or("unclosed <")?
                    + i;
                let name: String = chars[i + 1..close].iter().collect();
                i = close + 1;
                Atom::Words(name)
            }
            c => {
                i += 1;
                Atom::Chars(vec![c])
            }
        };
        let (mut min, mut max) = (1, 1);
        if chars.get(i) == Some(&'{') {
            let close = chars[i..]
                .iter()
                .position(|&c| c == '}')
                .ok_or("unclosed {")?
                + i;
            let body: String = chars[i + 1..close].iter().collect();
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad repetition {{{body}}}"));
            match body.split_once(',') {
                Some((a, b)) => {
                    min = num(a)?;
                    max = num(b)?;
                }
                None => {
                    min = num(&body)?;
                    max = min;
                }
            }
            if min > max {
                return Err(format!("bad repetition {{{body}}}"));
            }
            i = close + 1;
        }
        pieces.push(Piece { atom, min, max });
    }
    Ok(pieces)
}

/// A template bound to one locale, with word lists resolved.
#[derive(Debug, Clone)]
pub struct FormatTemplate {
    pub id: String,
    pub locale: Locale,
    pub pii_type: PiiTypeId,
    pub pattern: String,
    pieces: Vec<(Vec<String>, usize, usize)>,
    validator: Regex,
}

impl FormatTemplate {
    fn compile(
        id: &str,
        locale: &Locale,
        pii_type: &PiiTypeId,
        pattern: &str,
        words: &dyn Fn(&str) -> Option<Vec<String>>,
    ) -> Result<Self, String> {
        let parsed = parse(pattern)?;
        let mut pieces = Vec::new();
        let mut re = String::from("^");
        for p in parsed {
            let options: Vec<String> = match &p.atom {
                Atom::Chars(set) => set.iter().map(|c| c.to_string()).collect(),
                Atom::Words(name) => {
                    words(name).ok_or_else(|| format!("no word list {name:?} for {locale}"))?
                }
            };
            let alternation = options
                .iter()
                .map(|o| regex::escape(o))
                .collect::<Vec<_>>()
                .join("|");
            re.push_str(&format!("(?:{alternation}){{{},{}}}", p.min, p.max));
            pieces.push((options, p.min, p.max));
        }
        re.push('$');
        Ok(FormatTemplate {
            id: id.to_string(),
            locale: locale.clone(),
            pii_type: pii_type.clone(),
            pattern: pattern.to_string(),
            pieces,
            validator: Regex::new(&re).map_err(|e| e.to_string())?,
        })
    }

    pub fn generate(&self, rng: &mut impl Rng) -> String {
        let mut out = String::new();
        for (options, min, max) in &self.pieces {
            let n = rng.gen_range(*min..=*max);
            for _ in 0..n {
                out.push_str(options.choose(rng).expect("non-empty options"));
            }
        }
        out
    }

    pub fn validate(&self, value: &str) -> bool {
        self.validator.is_match(value)
    }
}

/// All format templates, one per registered (locale, type).
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<(Locale, PiiTypeId), FormatTemplate>,
    words: BTreeMap<(String, String), Vec<String>>,
}

fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').collect()))
}

impl TemplateRegistry {
    pub fn builtin() -> &'static TemplateRegistry {
        static BUILTIN: std::sync::OnceLock<TemplateRegistry> = std::sync::OnceLock::new();
        BUILTIN.get_or_init(|| {
            TemplateRegistry::from_tables(Registry::builtin(), TEMPLATES_TSV, WORDLISTS_TSV)
                .expect("bundled templates are well-formed")
        })
    }

    pub fn from_tables(registry: &Registry, templates: &str, wordlists: &str) -> Result<Self, SynthError> {
        let bad = |table: &str, line: usize, message: String| SynthError::Table {
            table: table.to_string(),
            line,
            message,
        };
        let mut words = BTreeMap::new();
        for (line, cols) in tsv_rows(wordlists) {
            let [locale, list, items] = cols[..] else {
                return Err(bad("wordlists", line, "expected 3 columns".into()));
            };
            let items: Vec<String> = items.split(',').map(str::to_string).collect();
            if items.iter().any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
                return Err(bad("wordlists", line, "empty word or whitespace inside a word".into()));
            }
            words.insert((locale.to_string(), list.to_string()), items);
        }
        let mut patterns = BTreeMap::new();
        for (line, cols) in tsv_rows(templates) {
            let [id, pattern] = cols[..] else {
                return Err(bad("templates", line, "expected 2 columns".into()));
            };
            parse(pattern).map_err(|m| bad("templates", line, m))?;
            patterns.insert(id.to_string(), pattern.to_string());
        }
        let mut compiled = BTreeMap::new();
        for entry in registry.entries() {
            let Some(pattern) = patterns.get(&entry.template_id) else {
                return Err(bad("templates", 0, format!("missing template {}", entry.template_id)));
            };
            let lookup = |name: &str| {
                words
                    .get(&(entry.locale.code().to_string(), name.to_string()))
                    .or_else(|| words.get(&("any".to_string(), name.to_string())))
                    .cloned()
            };
            let t = FormatTemplate::compile(&entry.template_id, &entry.locale, &entry.pii_type, pattern, &lookup)
                .map_err(|m| bad("templates", 0, format!("{}: {m}", entry.template_id)))?;
            compiled.insert((entry.locale.clone(), entry.pii_type.clone()), t);
        }
        Ok(TemplateRegistry {
            templates: compiled,
            words,
        })
    }

    pub fn template(&self, locale: &Locale, pii_type: &PiiTypeId) -> Result<&FormatTemplate, SynthError> {
        self.templates
            .get(&(locale.clone(), pii_type.clone()))
            .ok_or_else(|| SynthError::NoTemplate {
                locale: locale.to_string(),
                pii_type: pii_type.to_string(),
            })
    }

    pub fn templates(&self) -> impl Iterator<Item = &FormatTemplate> {
        self.templates.values()
    }

    /// Words of a locale list, falling back to the shared `any` list.
    pub fn words(&self, locale: &Locale, list: &str) -> Option<&[String]> {
        self.words
            .get(&(locale.code().to_string(), list.to_string()))
            .or_else(|| self.words.get(&("any".to_string(), list.to_string())))
            .map(Vec::as_slice)
    }
}

/// Generate a value of `pii_type` for `locale`.
pub fn gen_value(
    templates: &TemplateRegistry,
    locale: &Locale,
    pii_type: &PiiTypeId,
    rng: &mut impl Rng,
) -> Result<String, SynthError> {
    Ok(templates.template(locale, pii_type)?.generate(rng))
}
