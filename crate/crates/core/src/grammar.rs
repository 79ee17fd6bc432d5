//! Finite context-free grammars for instruction templates.
//!
//! Grammar files are line oriented:
//!
//! ```text
//! # comment
//! S -> "Meet at the" END_POINT "." | Intro "the" END_POINT "."
//! Intro -> "Go to"
//!        | "Walk to"
//! ```
//!
//! Quoted strings are literals (`""` expands to nothing), bare tokens that
//! appear on a left-hand side are nonterminals, and any other ALL_CAPS token
//! must name a registered placeholder. The first production is the start
//! symbol.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::tokenize;

pub const DEFAULT_CAPACITY: u128 = 10_000_000;

/// The grammar shipped with the crate.
pub const DEFAULT_GRAMMAR: &str = include_str!("../grammars/default.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationClass {
    Allocentric,
    Egocentric,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Style {
    Allocentric,
    Egocentric,
    Mixed,
    Neutral,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Style::Allocentric => "allocentric",
            Style::Egocentric => "egocentric",
            Style::Mixed => "mixed",
            Style::Neutral => "neutral",
        };
        f.write_str(s)
    }
}

macro_rules! placeholders {
    ($($variant:ident => $name:literal, $class:ident, $feature:literal;)*) => {
        /// Slots a template can leave open for grounded values.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Placeholder {
            $($variant,)*
        }

        impl Placeholder {
            pub const ALL: &'static [Placeholder] = &[$(Placeholder::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Placeholder::$variant => $name,)*
                }
            }

            pub fn class(self) -> RelationClass {
                match self {
                    $(Placeholder::$variant => RelationClass::$class,)*
                }
            }

            /// Which part of the sampled scenario fills this slot.
            pub fn feature(self) -> &'static str {
                match self {
                    $(Placeholder::$variant => $feature,)*
                }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $($name => Some(Placeholder::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

placeholders! {
    EndPoint => "END_POINT", Neutral, "goal";
    MainPivot => "MAIN_PIVOT", Neutral, "landmarks.main_pivots[first]";
    MainNearPivot => "MAIN_NEAR_PIVOT", Neutral, "landmarks.main_pivots[last]";
    NearPivot => "NEAR_PIVOT", Neutral, "landmarks.near[0]";
    BeyondPivot => "BEYOND_PIVOT", Neutral, "landmarks.beyond";
    CardinalDirection => "CARDINAL_DIRECTION", Allocentric, "features.cardinal_start_to_goal";
    PivotDirection => "PIVOT_DIRECTION", Allocentric, "features.cardinal_pivot_to_goal[first]";
    NearDirection => "NEAR_DIRECTION", Allocentric, "features.cardinal_near_to_goal[0]";
    Intersections => "INTERSECTIONS", Neutral, "features.n_intersections";
    Blocks => "BLOCKS", Neutral, "features.n_blocks";
    GoalPosition => "GOAL_POSITION", Allocentric, "features.block_position_allo";
    BlockPosition => "BLOCK_POSITION", Egocentric, "features.block_position_ego";
    EgoSide => "EGO_SIDE", Egocentric, "features.ego_side.near[0]";
    MainSide => "MAIN_SIDE", Egocentric, "features.ego_side.main_pivots[first]";
}

impl Placeholder {
    fn bit(self) -> u64 {
        1 << (self as u32)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of placeholders stored as a bit mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlaceholderSet(u64);

impl PlaceholderSet {
    pub const fn empty() -> Self {
        PlaceholderSet(0)
    }

    pub fn from_bits(bits: u64) -> Self {
        PlaceholderSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, p: Placeholder) {
        self.0 |= p.bit();
    }

    pub fn contains(self, p: Placeholder) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_subset(self, other: PlaceholderSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: PlaceholderSet) -> Self {
        PlaceholderSet(self.0 | other.0)
    }

    pub fn intersection(self, other: PlaceholderSet) -> Self {
        PlaceholderSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Placeholder> {
        Placeholder::ALL.iter().copied().filter(move |p| self.contains(p.to_owned()))
    }

    pub fn style(self) -> Style {
        let allo = self.iter().any(|p| p.class() == RelationClass::Allocentric);
        let ego = self.iter().any(|p| p.class() == RelationClass::Egocentric);
        match (allo, ego) {
            (true, true) => Style::Mixed,
            (true, false) => Style::Allocentric,
            (false, true) => Style::Egocentric,
            (false, false) => Style::Neutral,
        }
    }
}

impl FromIterator<Placeholder> for PlaceholderSet {
    fn from_iter<I: IntoIterator<Item = Placeholder>>(iter: I) -> Self {
        let mut set = PlaceholderSet::empty();
        for p in iter {
            set.insert(p);
        }
        set
    }
}

impl fmt::Display for PlaceholderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Placeholder::name).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// Landmark slots a template must mention whenever the scenario offers them.
pub fn mandatory_placeholders() -> PlaceholderSet {
    [Placeholder::NearPivot, Placeholder::MainPivot, Placeholder::BeyondPivot]
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: undefined nonterminal {name:?}")]
    UndefinedNonterminal { line: usize, name: String },
    #[error("line {line}: unknown placeholder {name:?}")]
    UnknownPlaceholder { line: usize, name: String },
    #[error("line {line}: nonterminal {name:?} already defined on line {first}")]
    DuplicateProduction { line: usize, first: usize, name: String },
    #[error("recursion detected: {}", cycle.join(" -> "))]
    Recursion { cycle: Vec<String> },
    #[error("grammar has no productions")]
    Empty,
    #[error("grammar expands to {count} templates, above the cap of {cap}")]
    Capacity { count: u128, cap: u128 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Symbol {
    Literal(String),
    Placeholder(Placeholder),
    Nonterminal(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub lhs: String,
    pub line: usize,
    pub alternatives: Vec<Vec<Symbol>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    productions: Vec<Production>,
}

enum RawSymbol {
    Literal(String),
    Bare(String),
}

struct RawProduction {
    lhs: String,
    line: usize,
    alternatives: Vec<Vec<(RawSymbol, usize)>>,
}

fn is_placeholder_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn lex_line(text: &str, line: usize) -> Result<Vec<LexToken>, GrammarError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    let err = |message: String| GrammarError::Syntax { line, message };
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                chars.next();
            }
            '|' => {
                chars.next();
                out.push(LexToken::Bar);
            }
            '-' => {
                chars.next();
                if chars.next().map(|(_, c)| c) != Some('>') {
                    return Err(err(format!("expected '->' at column {}", i + 1)));
                }
                out.push(LexToken::Arrow);
            }
            '"' => {
                chars.next();
                let mut lit = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => lit.push(e),
                            _ => return Err(err("invalid escape in literal".into())),
                        },
                        c => lit.push(c),
                    }
                }
                if !closed {
                    return Err(err(format!("unterminated literal starting at column {}", i + 1)));
                }
                out.push(LexToken::Literal(lit));
            }
            _ => {
                let start = i;
                let mut end = text.len();
                while let Some(&(j, c)) = chars.peek() {
                    if c.is_whitespace() || matches!(c, '|' | '"' | '#') {
                        end = j;
                        break;
                    }
                    chars.next();
                }
                let word = &text[start..end];
                if !is_identifier(word) {
                    return Err(err(format!("unexpected token {word:?}")));
                }
                out.push(LexToken::Word(word.to_string()));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, PartialEq)]
enum LexToken {
    Word(String),
    Literal(String),
    Arrow,
    Bar,
}

fn split_alternatives(
    tokens: Vec<LexToken>,
    line: usize,
    leading_bar: bool,
) -> Result<Vec<Vec<(RawSymbol, usize)>>, GrammarError> {
    let mut alts = vec![Vec::new()];
    let mut tokens = tokens.into_iter();
    if leading_bar {
        tokens.next();
    }
    for t in tokens {
        match t {
            LexToken::Bar => alts.push(Vec::new()),
            LexToken::Word(w) => alts.last_mut().unwrap().push((RawSymbol::Bare(w), line)),
            LexToken::Literal(l) => alts.last_mut().unwrap().push((RawSymbol::Literal(l), line)),
            LexToken::Arrow => {
                return Err(GrammarError::Syntax { line, message: "unexpected '->'".into() })
            }
        }
    }
    if alts.iter().any(Vec::is_empty) {
        return Err(GrammarError::Syntax {
            line,
            message: "empty alternative; use \"\" for an empty expansion".into(),
        });
    }
    Ok(alts)
}

fn read_raw(text: &str) -> Result<Vec<RawProduction>, GrammarError> {
    let mut raw: Vec<RawProduction> = Vec::new();
    for (idx, content) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = lex_line(content, line)?;
        match tokens.first() {
            None => continue,
            Some(LexToken::Bar) => {
                let Some(last) = raw.last_mut() else {
                    return Err(GrammarError::Syntax {
                        line,
                        message: "continuation line without a production".into(),
                    });
                };
                last.alternatives.extend(split_alternatives(tokens, line, true)?);
            }
            Some(LexToken::Word(_)) if tokens.get(1) == Some(&LexToken::Arrow) => {
                let mut tokens = tokens;
                let rest = tokens.split_off(2);
                let Some(LexToken::Word(lhs)) = tokens.into_iter().next() else { unreachable!() };
                raw.push(RawProduction { lhs, line, alternatives: split_alternatives(rest, line, false)? });
            }
            _ => {
                return Err(GrammarError::Syntax {
                    line,
                    message: "expected 'Name -> ...' or a '|' continuation".into(),
                })
            }
        }
    }
    Ok(raw)
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let raw = read_raw(text)?;
        if raw.is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, p) in raw.iter().enumerate() {
            if let Some(&first) = index.get(&p.lhs) {
                return Err(GrammarError::DuplicateProduction {
                    line: p.line,
                    first: raw[first].line,
                    name: p.lhs.clone(),
                });
            }
            index.insert(p.lhs.clone(), i);
        }
        let mut productions = Vec::with_capacity(raw.len());
        for p in raw {
            let mut alternatives = Vec::with_capacity(p.alternatives.len());
            for alt in p.alternatives {
                let mut symbols = Vec::with_capacity(alt.len());
                for (sym, line) in alt {
                    symbols.push(match sym {
                        RawSymbol::Literal(l) => Symbol::Literal(l),
                        RawSymbol::Bare(name) => {
                            if let Some(&nt) = index.get(&name) {
                                Symbol::Nonterminal(nt)
                            } else if is_placeholder_name(&name) {
                                match Placeholder::from_name(&name) {
                                    Some(ph) => Symbol::Placeholder(ph),
                                    None => return Err(GrammarError::UnknownPlaceholder { line, name }),
                                }
                            } else {
                                return Err(GrammarError::UndefinedNonterminal { line, name });
                            }
                        }
                    });
                }
                alternatives.push(symbols);
            }
            productions.push(Production { lhs: p.lhs, line: p.line, alternatives });
        }
        let grammar = Grammar { productions };
        if let Some(cycle) = grammar.find_cycle() {
            return Err(GrammarError::Recursion { cycle });
        }
        Ok(grammar)
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn start(&self) -> &str {
        &self.productions[0].lhs
    }

    /// Depth-first search over the nonterminal reference graph.
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let n = self.productions.len();
        let mut marks = vec![Mark::New; n];
        let mut stack: Vec<usize> = Vec::new();

        fn visit(
            g: &Grammar,
            v: usize,
            marks: &mut [Mark],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<String>> {
            marks[v] = Mark::Active;
            stack.push(v);
            for alt in &g.productions[v].alternatives {
                for sym in alt {
                    let Symbol::Nonterminal(w) = *sym else { continue };
                    match marks[w] {
                        Mark::Active => {
                            let pos = stack.iter().position(|&s| s == w).unwrap();
                            let mut cycle: Vec<String> =
                                stack[pos..].iter().map(|&s| g.productions[s].lhs.clone()).collect();
                            cycle.push(g.productions[w].lhs.clone());
                            return Some(cycle);
                        }
                        Mark::New => {
                            if let Some(c) = visit(g, w, marks, stack) {
                                return Some(c);
                            }
                        }
                        Mark::Done => {}
                    }
                }
            }
            stack.pop();
            marks[v] = Mark::Done;
            None
        }

        (0..n).find_map(|v| {
            if marks[v] == Mark::New {
                visit(self, v, &mut marks, &mut stack)
            } else {
                None
            }
        })
    }

    /// Number of templates the grammar expands to, computed without
    /// materializing them. Saturates at `u128::MAX`.
    pub fn count_templates(&self) -> u128 {
        let mut memo: Vec<Option<u128>> = vec![None; self.productions.len()];
        self.count_nt(0, &mut memo)
    }

    fn count_nt(&self, nt: usize, memo: &mut Vec<Option<u128>>) -> u128 {
        if let Some(c) = memo[nt] {
            return c;
        }
        let mut total: u128 = 0;
        for alt in &self.productions[nt].alternatives {
            let mut product: u128 = 1;
            for sym in alt {
                if let Symbol::Nonterminal(w) = *sym {
                    product = product.saturating_mul(self.count_nt(w, memo));
                }
            }
            total = total.saturating_add(product);
        }
        memo[nt] = Some(total);
        total
    }

    /// Distinct terminal tokens (literals tokenized and lowercased) plus the
    /// placeholder names the grammar uses.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut vocab = BTreeSet::new();
        for sym in self.productions.iter().flat_map(|p| p.alternatives.iter().flatten()) {
            match sym {
                Symbol::Literal(l) => vocab.extend(tokenize(l).into_iter().map(str::to_lowercase)),
                Symbol::Placeholder(p) => {
                    vocab.insert(p.name().to_string());
                }
                Symbol::Nonterminal(_) => {}
            }
        }
        vocab
    }

    /// Nonterminals unreachable from the start symbol.
    pub fn unreachable(&self) -> Vec<&str> {
        let mut seen = vec![false; self.productions.len()];
        let mut todo = vec![0];
        seen[0] = true;
        while let Some(v) = todo.pop() {
            for sym in self.productions[v].alternatives.iter().flatten() {
                if let Symbol::Nonterminal(w) = *sym {
                    if !seen[w] {
                        seen[w] = true;
                        todo.push(w);
                    }
                }
            }
        }
        self.productions
            .iter()
            .zip(seen)
            .filter(|(_, s)| !s)
            .map(|(p, _)| p.lhs.as_str())
            .collect()
    }

    /// Non-fatal findings: unreachable nonterminals and repeated alternatives.
    pub fn lint(&self) -> Vec<String> {
        let mut findings: Vec<String> = self
            .unreachable()
            .into_iter()
            .map(|nt| format!("nonterminal {nt:?} is unreachable from {:?}", self.start()))
            .collect();
        for p in &self.productions {
            for (i, alt) in p.alternatives.iter().enumerate() {
                if p.alternatives[..i].contains(alt) {
                    findings.push(format!(
                        "line {}: {:?} repeats alternative {}",
                        p.line,
                        p.lhs,
                        i + 1
                    ));
                }
            }
        }
        findings
    }

    pub fn enumerate(&self) -> Result<Vec<Template>, GrammarError> {
        self.enumerate_with_cap(DEFAULT_CAPACITY)
    }

    /// Every template in depth-first order: alternatives in file order, the
    /// leftmost symbol varying slowest.
    pub fn enumerate_with_cap(&self, cap: u128) -> Result<Vec<Template>, GrammarError> {
        let count = self.count_templates();
        if count > cap {
            return Err(GrammarError::Capacity { count, cap });
        }
        let mut lexicon = Lexicon::default();
        let mut memo: Vec<Option<Arc<Vec<Vec<u32>>>>> = vec![None; self.productions.len()];
        let expansions = self.expand(0, &mut lexicon, &mut memo);
        let lexicon = Arc::new(lexicon);
        let mut seen: HashMap<u64, usize> = HashMap::new();
        let templates = expansions
            .iter()
            .map(|tokens| {
                let hash = lexicon.hash(tokens);
                let dup = seen.entry(hash).or_insert(0);
                let id = if *dup == 0 { format!("{hash:016x}") } else { format!("{hash:016x}-{dup}") };
                *dup += 1;
                Template::new(id, tokens.clone(), Arc::clone(&lexicon))
            })
            .collect();
        Ok(templates)
    }

    fn expand(
        &self,
        nt: usize,
        lexicon: &mut Lexicon,
        memo: &mut Vec<Option<Arc<Vec<Vec<u32>>>>>,
    ) -> Arc<Vec<Vec<u32>>> {
        if let Some(done) = &memo[nt] {
            return Arc::clone(done);
        }
        let mut out: Vec<Vec<u32>> = Vec::new();
        for alt in &self.productions[nt].alternatives {
            let mut partial: Vec<Vec<u32>> = vec![Vec::new()];
            for sym in alt {
                let parts: Arc<Vec<Vec<u32>>> = match sym {
                    Symbol::Literal(l) if l.trim().is_empty() => continue,
                    Symbol::Literal(l) => Arc::new(vec![vec![lexicon.intern(Token::Literal(l.clone()))]]),
                    Symbol::Placeholder(p) => Arc::new(vec![vec![lexicon.intern(Token::Placeholder(*p))]]),
                    Symbol::Nonterminal(w) => self.expand(*w, lexicon, memo),
                };
                let mut next = Vec::with_capacity(partial.len() * parts.len());
                for prefix in &partial {
                    for suffix in parts.iter() {
                        let mut t = prefix.clone();
                        t.extend_from_slice(suffix);
                        next.push(t);
                    }
                }
                partial = next;
            }
            out.extend(partial);
        }
        let out = Arc::new(out);
        memo[nt] = Some(Arc::clone(&out));
        out
    }
}

impl std::str::FromStr for Grammar {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grammar::parse(s)
    }
}

/// The shipped grammar, parsed.
pub fn default_grammar() -> Grammar {
    Grammar::parse(DEFAULT_GRAMMAR).expect("shipped grammar is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Literal(String),
    Placeholder(Placeholder),
}

/// Interned tokens shared by all templates of one enumeration.
#[derive(Debug, Default)]
pub struct Lexicon {
    tokens: Vec<Token>,
    index: HashMap<Token, u32>,
}

impl Lexicon {
    fn intern(&mut self, t: Token) -> u32 {
        if let Some(&i) = self.index.get(&t) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.tokens.push(t.clone());
        self.index.insert(t, i);
        i
    }

    pub fn get(&self, i: u32) -> &Token {
        &self.tokens[i as usize]
    }

    /// FNV-1a over the token texts, separated by a unit separator.
    fn hash(&self, tokens: &[u32]) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        for (k, &t) in tokens.iter().enumerate() {
            if k > 0 {
                h ^= 0x1f;
                h = h.wrapping_mul(PRIME);
            }
            let text = match self.get(t) {
                Token::Literal(l) => l.as_str(),
                Token::Placeholder(p) => p.name(),
            };
            for b in text.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct Template {
    id: String,
    tokens: Vec<u32>,
    placeholders: PlaceholderSet,
    lexicon: Arc<Lexicon>,
}

const NO_SPACE_BEFORE: [&str; 6] = [".", ",", ";", ":", "!", "?"];

impl Template {
    fn new(id: String, tokens: Vec<u32>, lexicon: Arc<Lexicon>) -> Self {
        let placeholders = tokens
            .iter()
            .filter_map(|&t| match lexicon.get(t) {
                Token::Placeholder(p) => Some(*p),
                Token::Literal(_) => None,
            })
            .collect();
        Template { id, tokens, placeholders, lexicon }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn placeholders(&self) -> PlaceholderSet {
        self.placeholders
    }

    pub fn style(&self) -> Style {
        self.placeholders.style()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().map(|&t| self.lexicon.get(t))
    }

    /// Substitutes every placeholder and joins the result into a sentence:
    /// single spaces, no space before punctuation, and a capital letter at
    /// the start of each sentence. Fails with the first slot `fill` cannot
    /// provide.
    pub fn render<F>(&self, mut fill: F) -> Result<String, Placeholder>
    where
        F: FnMut(Placeholder) -> Option<String>,
    {
        let mut out = String::new();
        for token in self.tokens() {
            let piece = match token {
                Token::Literal(l) => l.clone(),
                Token::Placeholder(p) => fill(*p).ok_or(*p)?,
            };
            let piece = piece.split_whitespace().collect::<Vec<_>>().join(" ");
            if piece.is_empty() {
                continue;
            }
            if !out.is_empty() && !NO_SPACE_BEFORE.iter().any(|p| piece.starts_with(p)) {
                out.push(' ');
            }
            out.push_str(&piece);
        }
        Ok(capitalize_sentences(&out))
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = self
            .render(|p| Some(p.name().to_string()))
            .expect("placeholder names always render");
        f.write_str(&text)
    }
}

impl PartialEq for Template {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.tokens().eq(other.tokens())
    }
}

fn capitalize_sentences(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut at_start = true;
    for c in s.chars() {
        if at_start && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            at_start = false;
            continue;
        }
        if matches!(c, '.' | '!' | '?') {
            at_start = true;
        } else if !c.is_whitespace() {
            at_start = false;
        }
        out.push(c);
    }
    out
}

/// Placeholders a compatible template must mention given what is available.
pub fn required_placeholders(available: PlaceholderSet) -> PlaceholderSet {
    let mut required = available.intersection(mandatory_placeholders());
    required.insert(Placeholder::EndPoint);
    required
}

pub fn is_compatible(template: PlaceholderSet, available: PlaceholderSet) -> bool {
    template.is_subset(available) && required_placeholders(available).is_subset(template)
}

pub fn compatible_templates(templates: &[Template], available: PlaceholderSet) -> Vec<&Template> {
    templates.iter().filter(|t| is_compatible(t.placeholders(), available)).collect()
}

pub fn filter_by_style(templates: &[Template], style: Style) -> Vec<Template> {
    templates.iter().filter(|t| matches_style(t.placeholders(), style)).cloned().collect()
}

fn matches_style(set: PlaceholderSet, style: Style) -> bool {
    let allo = set.iter().any(|p| p.class() == RelationClass::Allocentric);
    let ego = set.iter().any(|p| p.class() == RelationClass::Egocentric);
    match style {
        Style::Allocentric => !ego,
        Style::Egocentric => ego && !allo,
        Style::Mixed => ego && allo,
        Style::Neutral => !ego && !allo,
    }
}

/// A unit of coverage: a placeholder used within a style, or the style itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoverFeature {
    pub placeholder: Option<Placeholder>,
    pub style: Style,
}

pub fn cover_features(set: PlaceholderSet) -> Vec<CoverFeature> {
    let style = set.style();
    std::iter::once(CoverFeature { placeholder: None, style })
        .chain(set.iter().map(|p| CoverFeature { placeholder: Some(p), style }))
        .collect()
}

/// Scans sets in order, keeping each one that adds an uncovered feature.
/// Returns the kept indices.
pub fn greedy_cover_indices(sets: &[PlaceholderSet]) -> Vec<usize> {
    let universe: BTreeSet<CoverFeature> = sets.iter().flat_map(|s| cover_features(*s)).collect();
    let mut covered = BTreeSet::new();
    let mut kept = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        if covered.len() == universe.len() {
            break;
        }
        let features = cover_features(*s);
        if features.iter().any(|f| !covered.contains(f)) {
            covered.extend(features);
            kept.push(i);
        }
    }
    kept
}

/// Greedy cover followed by a pruning pass, latest first, that drops any
/// kept set whose features are all covered by the remaining ones.
pub fn minimal_cover_indices(sets: &[PlaceholderSet]) -> Vec<usize> {
    let mut kept = greedy_cover_indices(sets);
    let mut counts: BTreeMap<CoverFeature, usize> = BTreeMap::new();
    for &i in &kept {
        for f in cover_features(sets[i]) {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    for pos in (0..kept.len()).rev() {
        let features = cover_features(sets[kept[pos]]);
        if features.iter().all(|f| counts[f] > 1) {
            for f in &features {
                *counts.get_mut(f).unwrap() -= 1;
            }
            kept.remove(pos);
        }
    }
    kept
}

pub fn greedy_cover(templates: &[Template]) -> Vec<Template> {
    let sets: Vec<PlaceholderSet> = templates.iter().map(Template::placeholders).collect();
    greedy_cover_indices(&sets).into_iter().map(|i| templates[i].clone()).collect()
}

pub fn minimal_cover(templates: &[Template]) -> Vec<Template> {
    let sets: Vec<PlaceholderSet> = templates.iter().map(Template::placeholders).collect();
    minimal_cover_indices(&sets).into_iter().map(|i| templates[i].clone()).collect()
}

/// Templates indexed by placeholder set for fast compatible draws.
#[derive(Debug, Clone)]
pub struct TemplatePool {
    templates: Vec<Template>,
    by_set: BTreeMap<PlaceholderSet, Vec<usize>>,
    by_id: HashMap<String, usize>,
}

impl TemplatePool {
    pub fn new(templates: Vec<Template>) -> Self {
        let mut by_set: BTreeMap<PlaceholderSet, Vec<usize>> = BTreeMap::new();
        let mut by_id = HashMap::with_capacity(templates.len());
        for (i, t) in templates.iter().enumerate() {
            by_set.entry(t.placeholders()).or_default().push(i);
            by_id.insert(t.id().to_string(), i);
        }
        TemplatePool { templates, by_set, by_id }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.by_id.get(id).map(|&i| &self.templates[i])
    }

    pub fn compatible_count(&self, available: PlaceholderSet) -> usize {
        self.by_set
            .iter()
            .filter(|(set, _)| is_compatible(**set, available))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Uniform draw among compatible templates.
    pub fn choose<R: Rng>(&self, available: PlaceholderSet, rng: &mut R) -> Option<&Template> {
        let groups: Vec<&Vec<usize>> = self
            .by_set
            .iter()
            .filter(|(set, _)| is_compatible(**set, available))
            .map(|(_, v)| v)
            .collect();
        let total: usize = groups.iter().map(|g| g.len()).sum();
        if total == 0 {
            return None;
        }
        let mut k = rng.random_range(0..total);
        for g in groups {
            if k < g.len() {
                return Some(&self.templates[g[k]]);
            }
            k -= g.len();
        }
        unreachable!()
    }
}
