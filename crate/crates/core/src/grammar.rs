//! Context-free grammars for dataset generation.
//!
//! Grammars are plain data: one production per line in the form
//! `LHS -> alt1 | alt2`, with `#` starting a comment. Any symbol that
//! appears on a left-hand side is a nonterminal; every other symbol is a
//! terminal word. The start symbol is the left-hand side of the first
//! production. Repeated left-hand sides append alternatives in order.
//!
//! Sampling is top-down with a per-nonterminal recursion cap, and
//! membership is decided by an independent CYK chart over a binarized
//! copy of the grammar.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::Span;

const MAIN_AUX_SRC: &str = include_str!("../grammars/main_aux.cfg");
const SUBJECT_NOUN_SRC: &str = include_str!("../grammars/subject_noun.cfg");
const AGREEMENT_SRC: &str = include_str!("../grammars/agreement.cfg");
const REFLEXIVE_SRC: &str = include_str!("../grammars/reflexive.cfg");

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("unknown grammar id `{0}` (expected main_aux, subject_noun, agreement or reflexive)")]
    UnknownGrammar(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("grammar has no productions")]
    Empty,
    #[error("unknown nonterminal `{0}`")]
    UnknownNonterminal(String),
    #[error("nonterminal `{0}` has no non-recursive production to fall back to at the depth cap")]
    NoEscape(String),
    #[error("invalid production weights for `{nonterminal}`: {message}")]
    BadWeights { nonterminal: String, message: String },
    #[error("max_recursion_depth must be positive")]
    ZeroDepth,
    #[error("failed to read grammar file: {0}")]
    Io(#[from] std::io::Error),
}

/// The four grammars shipped with the toolkit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarId {
    MainAux,
    SubjectNoun,
    Agreement,
    Reflexive,
}

impl GrammarId {
    pub const ALL: [GrammarId; 4] = [
        GrammarId::MainAux,
        GrammarId::SubjectNoun,
        GrammarId::Agreement,
        GrammarId::Reflexive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GrammarId::MainAux => "main_aux",
            GrammarId::SubjectNoun => "subject_noun",
            GrammarId::Agreement => "agreement",
            GrammarId::Reflexive => "reflexive",
        }
    }

    /// Source text of the shipped grammar file.
    pub fn source(self) -> &'static str {
        match self {
            GrammarId::MainAux => MAIN_AUX_SRC,
            GrammarId::SubjectNoun => SUBJECT_NOUN_SRC,
            GrammarId::Agreement => AGREEMENT_SRC,
            GrammarId::Reflexive => REFLEXIVE_SRC,
        }
    }
}

impl FromStr for GrammarId {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "main_aux" => Ok(GrammarId::MainAux),
            "subject_noun" => Ok(GrammarId::SubjectNoun),
            "agreement" => Ok(GrammarId::Agreement),
            "reflexive" => Ok(GrammarId::Reflexive),
            _ => Err(GrammarError::UnknownGrammar(s.to_string())),
        }
    }
}

impl fmt::Display for GrammarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loads one of the shipped grammars by id string.
pub fn load_builtin(name: &str) -> Result<Grammar, GrammarError> {
    let id: GrammarId = name.parse()?;
    Ok(builtin(id))
}

/// Loads a shipped grammar. The shipped files are parsed in tests, so this
/// cannot fail at runtime.
pub fn builtin(id: GrammarId) -> Grammar {
    Grammar::from_text(id.source()).expect("shipped grammar parses")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NonTerminal(u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Terminal(u32);

impl NonTerminal {
    fn index(self) -> usize {
        self.0 as usize
    }
}

impl Terminal {
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    T(Terminal),
    N(NonTerminal),
}

#[derive(Clone, Debug)]
pub struct Grammar {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    nonterminal_ids: HashMap<String, NonTerminal>,
    terminal_ids: HashMap<String, Terminal>,
    productions: Vec<Vec<Vec<Symbol>>>,
    start: NonTerminal,
}

impl Grammar {
    pub fn from_text(text: &str) -> Result<Self, GrammarError> {
        let mut rules: Vec<(usize, String, Vec<Vec<String>>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, rhs) = line.split_once("->").ok_or_else(|| GrammarError::Syntax {
                line: line_no,
                message: "expected `LHS -> alternatives`".into(),
            })?;
            let lhs = lhs.trim();
            if lhs.is_empty() || lhs.split_whitespace().count() != 1 {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    message: format!("left-hand side must be a single symbol, got `{lhs}`"),
                });
            }
            let mut alts = Vec::new();
            for alt in rhs.split('|') {
                let symbols: Vec<String> = alt.split_whitespace().map(str::to_string).collect();
                if symbols.is_empty() {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        message: "empty alternative".into(),
                    });
                }
                alts.push(symbols);
            }
            rules.push((line_no, lhs.to_string(), alts));
        }
        if rules.is_empty() {
            return Err(GrammarError::Empty);
        }

        let mut nonterminals = Vec::new();
        let mut nonterminal_ids = HashMap::new();
        for (_, lhs, _) in &rules {
            if !nonterminal_ids.contains_key(lhs) {
                nonterminal_ids.insert(lhs.clone(), NonTerminal(nonterminals.len() as u32));
                nonterminals.push(lhs.clone());
            }
        }

        let mut terminals = Vec::new();
        let mut terminal_ids = HashMap::new();
        let mut productions = vec![Vec::new(); nonterminals.len()];
        for (_, lhs, alts) in rules {
            let nt = nonterminal_ids[&lhs];
            for alt in alts {
                let rhs = alt
                    .into_iter()
                    .map(|sym| match nonterminal_ids.get(&sym) {
                        Some(&n) => Symbol::N(n),
                        None => {
                            let next = Terminal(terminals.len() as u32);
                            let t = *terminal_ids.entry(sym.clone()).or_insert(next);
                            if t == next {
                                terminals.push(sym);
                            }
                            Symbol::T(t)
                        }
                    })
                    .collect();
                productions[nt.index()].push(rhs);
            }
        }

        Ok(Self {
            nonterminals,
            terminals,
            nonterminal_ids,
            terminal_ids,
            productions,
            start: NonTerminal(0),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn start(&self) -> NonTerminal {
        self.start
    }

    pub fn nonterminal(&self, name: &str) -> Option<NonTerminal> {
        self.nonterminal_ids.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<NonTerminal, GrammarError> {
        self.nonterminal(name)
            .ok_or_else(|| GrammarError::UnknownNonterminal(name.to_string()))
    }

    pub fn terminal(&self, word: &str) -> Option<Terminal> {
        self.terminal_ids.get(word).copied()
    }

    pub fn name(&self, nt: NonTerminal) -> &str {
        &self.nonterminals[nt.index()]
    }

    pub fn word(&self, t: Terminal) -> &str {
        &self.terminals[t.index()]
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = NonTerminal> + '_ {
        (0..self.nonterminals.len() as u32).map(NonTerminal)
    }

    pub fn terminals(&self) -> impl Iterator<Item = &str> {
        self.terminals.iter().map(String::as_str)
    }

    pub fn productions(&self, nt: NonTerminal) -> &[Vec<Symbol>] {
        &self.productions[nt.index()]
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        match sym {
            Symbol::T(t) => self.word(t),
            Symbol::N(n) => self.name(n),
        }
    }

    /// True if `lhs` has an alternative spelled exactly `rhs`.
    pub fn has_production(&self, lhs: &str, rhs: &[&str]) -> bool {
        self.nonterminal(lhs).is_some_and(|nt| {
            self.productions(nt)
                .iter()
                .any(|alt| alt.len() == rhs.len() && alt.iter().zip(rhs).all(|(s, want)| self.symbol_name(*s) == *want))
        })
    }

    /// Words of every single-terminal alternative of a preterminal, in
    /// declaration order with duplicates removed.
    pub fn lexicon(&self, name: &str) -> Result<Vec<&str>, GrammarError> {
        let nt = self.require(name)?;
        let mut out: Vec<&str> = Vec::new();
        for alt in self.productions(nt) {
            if let [Symbol::T(t)] = alt.as_slice() {
                let w = self.word(*t);
                if !out.contains(&w) {
                    out.push(w);
                }
            }
        }
        Ok(out)
    }

    /// Renders the grammar back to the text format, one line per nonterminal.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for nt in self.nonterminals() {
            let alts: Vec<String> = self
                .productions(nt)
                .iter()
                .map(|alt| alt.iter().map(|s| self.symbol_name(*s)).collect::<Vec<_>>().join(" "))
                .collect();
            out.push_str(&format!("{} -> {}\n", self.name(nt), alts.join(" | ")));
        }
        out
    }

    /// For each nonterminal, the set of nonterminals reachable in one or
    /// more derivation steps.
    fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.nonterminals.len();
        let mut reach = vec![vec![false; n]; n];
        for a in 0..n {
            for alt in &self.productions[a] {
                for sym in alt {
                    if let Symbol::N(b) = sym {
                        reach[a][b.index()] = true;
                    }
                }
            }
        }
        // Warshall closure.
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    /// Decides whether `words` is in the language of the grammar.
    pub fn recognize<S: AsRef<str>>(&self, words: &[S]) -> bool {
        Recognizer::new(self).accepts(words)
    }
}

/// A node of a sampled derivation.
#[derive(Clone, Debug, PartialEq)]
pub enum DerivationTree {
    Leaf {
        terminal: Terminal,
        position: usize,
    },
    Node {
        symbol: NonTerminal,
        production: usize,
        children: Vec<DerivationTree>,
        span: Span,
    },
}

impl DerivationTree {
    pub fn span(&self) -> Span {
        match self {
            DerivationTree::Leaf { position, .. } => Span::single(*position),
            DerivationTree::Node { span, .. } => *span,
        }
    }

    pub fn symbol(&self) -> Option<NonTerminal> {
        match self {
            DerivationTree::Node { symbol, .. } => Some(*symbol),
            DerivationTree::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[DerivationTree] {
        match self {
            DerivationTree::Node { children, .. } => children,
            DerivationTree::Leaf { .. } => &[],
        }
    }

    /// Index of the expanded alternative, for interior nodes.
    pub fn production(&self) -> Option<usize> {
        match self {
            DerivationTree::Node { production, .. } => Some(*production),
            DerivationTree::Leaf { .. } => None,
        }
    }

    pub fn terminals(&self) -> Vec<Terminal> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals(&self, out: &mut Vec<Terminal>) {
        match self {
            DerivationTree::Leaf { terminal, .. } => out.push(*terminal),
            DerivationTree::Node { children, .. } => {
                for c in children {
                    c.collect_terminals(out);
                }
            }
        }
    }

    /// The yielded sentence.
    pub fn words(&self, g: &Grammar) -> Vec<String> {
        self.terminals().into_iter().map(|t| g.word(t).to_string()).collect()
    }

    /// All interior nodes labeled `nt`, in preorder (hence in linear order of
    /// their start positions).
    pub fn find(&self, nt: NonTerminal) -> Vec<&DerivationTree> {
        let mut out = Vec::new();
        self.visit(&mut |node| {
            if node.symbol() == Some(nt) {
                out.push(node);
            }
        });
        out
    }

    pub fn contains(&self, nt: NonTerminal) -> bool {
        !self.find(nt).is_empty()
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a DerivationTree)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Largest number of `nt` nodes strictly nested below another `nt` node
    /// along any root-to-leaf path.
    pub fn self_nesting(&self, nt: NonTerminal) -> usize {
        fn walk(t: &DerivationTree, nt: NonTerminal, seen: usize) -> usize {
            let here = seen + usize::from(t.symbol() == Some(nt));
            let below = t.children().iter().map(|c| walk(c, nt, here)).max().unwrap_or(0);
            below.max(here.saturating_sub(1))
        }
        walk(self, nt, 0)
    }
}

/// Per-nonterminal relative weights over alternatives, keyed by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductionWeights(pub HashMap<String, Vec<f64>>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub max_recursion_depth: usize,
    pub production_weights: Option<ProductionWeights>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_recursion_depth: 4,
            production_weights: None,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Draws derivations from a grammar. Successive calls advance one RNG
/// stream, so the n-th sample is a pure function of grammar, config and n.
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    rng: ChaCha8Rng,
    depth_cap: usize,
    weights: Vec<Option<Vec<f64>>>,
    recursive: Vec<Vec<bool>>,
    fallback: Vec<Option<usize>>,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar, cfg: &SamplerConfig) -> Result<Self, GrammarError> {
        if cfg.max_recursion_depth == 0 {
            return Err(GrammarError::ZeroDepth);
        }
        let n = grammar.nonterminals.len();
        let mut weights = vec![None; n];
        if let Some(pw) = &cfg.production_weights {
            for (name, w) in &pw.0 {
                let nt = grammar.require(name)?;
                let bad = |message: &str| GrammarError::BadWeights {
                    nonterminal: name.clone(),
                    message: message.to_string(),
                };
                if w.len() != grammar.productions(nt).len() {
                    return Err(bad("one weight per alternative required"));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(bad("weights must be finite and nonnegative"));
                }
                if w.iter().sum::<f64>() <= 0.0 {
                    return Err(bad("weights must sum to a positive value"));
                }
                weights[nt.index()] = Some(w.clone());
            }
        }

        let reach = grammar.reachability();
        let mut recursive = Vec::with_capacity(n);
        let mut fallback = Vec::with_capacity(n);
        for a in 0..n {
            let flags: Vec<bool> = grammar.productions[a]
                .iter()
                .map(|alt| {
                    alt.iter().any(|s| match s {
                        Symbol::N(b) => b.index() == a || reach[b.index()][a],
                        Symbol::T(_) => false,
                    })
                })
                .collect();
            let shortest = flags
                .iter()
                .enumerate()
                .filter(|(_, rec)| !**rec)
                .min_by_key(|(i, _)| grammar.productions[a][*i].len())
                .map(|(i, _)| i);
            recursive.push(flags);
            fallback.push(shortest);
        }

        Ok(Self {
            grammar,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            depth_cap: cfg.max_recursion_depth,
            weights,
            recursive,
            fallback,
        })
    }

    pub fn sample(&mut self) -> Result<DerivationTree, GrammarError> {
        self.sample_from(self.grammar.start())
    }

    pub fn sample_from(&mut self, root: NonTerminal) -> Result<DerivationTree, GrammarError> {
        let mut open = vec![0usize; self.grammar.nonterminals.len()];
        let mut position = 0;
        self.expand(root, &mut open, &mut position)
    }

    fn choose(&mut self, nt: NonTerminal, capped: bool) -> Result<usize, GrammarError> {
        let a = nt.index();
        if capped {
            return self.fallback[a].ok_or_else(|| GrammarError::NoEscape(self.grammar.name(nt).to_string()));
        }
        let count = self.grammar.productions[a].len();
        match &self.weights[a] {
            None => Ok(self.rng.random_range(0..count)),
            Some(w) => {
                let total: f64 = w.iter().sum();
                let mut u = self.rng.random::<f64>() * total;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        return Ok(i);
                    }
                    u -= wi;
                }
                // Rounding left u at the top edge; take the last positive weight.
                Ok(w.iter().rposition(|x| *x > 0.0).unwrap_or(count - 1))
            }
        }
    }

    fn expand(
        &mut self,
        nt: NonTerminal,
        open: &mut [usize],
        position: &mut usize,
    ) -> Result<DerivationTree, GrammarError> {
        let a = nt.index();
        let capped = open[a] >= self.depth_cap;
        let production = self.choose(nt, capped)?;
        debug_assert!(!capped || !self.recursive[a][production]);

        open[a] += 1;
        let start = *position;
        let rhs = self.grammar.productions[a][production].clone();
        let mut children = Vec::with_capacity(rhs.len());
        for sym in rhs {
            match sym {
                Symbol::T(terminal) => {
                    children.push(DerivationTree::Leaf {
                        terminal,
                        position: *position,
                    });
                    *position += 1;
                }
                Symbol::N(child) => children.push(self.expand(child, open, position)?),
            }
        }
        open[a] -= 1;

        Ok(DerivationTree::Node {
            symbol: nt,
            production,
            children,
            span: Span::new(start, *position),
        })
    }
}

/// Samples one derivation from a fresh sampler.
pub fn sample(g: &Grammar, cfg: &SamplerConfig) -> Result<DerivationTree, GrammarError> {
    Sampler::new(g, cfg)?.sample()
}

/// CYK over a binarized copy of the grammar. Unit productions are kept and
/// handled by closing each chart cell under the unit relation.
struct Recognizer {
    symbols: usize,
    start: usize,
    lexical: HashMap<String, Vec<usize>>,
    binary: Vec<(usize, usize, usize)>,
    unit_parents: Vec<Vec<usize>>,
}

impl Recognizer {
    fn new(g: &Grammar) -> Self {
        let mut symbols = g.nonterminals.len();
        let mut lexical: HashMap<String, Vec<usize>> = HashMap::new();
        let mut binary = Vec::new();
        let mut units: Vec<(usize, usize)> = Vec::new();
        let mut preterminal_of: HashMap<Terminal, usize> = HashMap::new();

        for a in 0..g.nonterminals.len() {
            for alt in &g.productions[a] {
                match alt.as_slice() {
                    [Symbol::T(t)] => lexical.entry(g.word(*t).to_string()).or_default().push(a),
                    [Symbol::N(b)] => units.push((a, b.index())),
                    _ => {
                        let mut ids: Vec<usize> = Vec::with_capacity(alt.len());
                        for sym in alt {
                            ids.push(match sym {
                                Symbol::N(b) => b.index(),
                                Symbol::T(t) => *preterminal_of.entry(*t).or_insert_with(|| {
                                    let id = symbols;
                                    symbols += 1;
                                    lexical.entry(g.word(*t).to_string()).or_default().push(id);
                                    id
                                }),
                            });
                        }
                        let mut lhs = a;
                        for i in 0..ids.len() - 2 {
                            let rest = symbols;
                            symbols += 1;
                            binary.push((lhs, ids[i], rest));
                            lhs = rest;
                        }
                        binary.push((lhs, ids[ids.len() - 2], ids[ids.len() - 1]));
                    }
                }
            }
        }

        // unit_parents[b] = every a with a =>* b through unit productions, b included.
        let mut unit_parents = vec![Vec::new(); symbols];
        for (b, parents) in unit_parents.iter_mut().enumerate() {
            let mut seen = vec![false; symbols];
            let mut stack = vec![b];
            seen[b] = true;
            while let Some(x) = stack.pop() {
                parents.push(x);
                for &(a, child) in &units {
                    if child == x && !seen[a] {
                        seen[a] = true;
                        stack.push(a);
                    }
                }
            }
        }

        Self {
            symbols,
            start: g.start().index(),
            lexical,
            binary,
            unit_parents,
        }
    }

    fn close(&self, cell: &mut [bool]) {
        let present: Vec<usize> = (0..self.symbols).filter(|&s| cell[s]).collect();
        for s in present {
            for &p in &self.unit_parents[s] {
                cell[p] = true;
            }
        }
    }

    fn accepts<S: AsRef<str>>(&self, words: &[S]) -> bool {
        let n = words.len();
        if n == 0 {
            return false;
        }
        // chart[i][len - 1]: symbols deriving words[i..i + len].
        let mut chart = vec![vec![vec![false; self.symbols]; n]; n];
        for (i, w) in words.iter().enumerate() {
            let Some(pre) = self.lexical.get(w.as_ref()) else {
                return false;
            };
            for &a in pre {
                chart[i][0][a] = true;
            }
            self.close(&mut chart[i][0]);
        }
        for len in 2..=n {
            for i in 0..=n - len {
                let mut cell = vec![false; self.symbols];
                for left_len in 1..len {
                    let left = &chart[i][left_len - 1];
                    let right = &chart[i + left_len][len - left_len - 1];
                    for &(a, b, c) in &self.binary {
                        if left[b] && right[c] {
                            cell[a] = true;
                        }
                    }
                }
                self.close(&mut cell);
                chart[i][len - 1] = cell;
            }
        }
        chart[0][n - 1][self.start]
    }
}
