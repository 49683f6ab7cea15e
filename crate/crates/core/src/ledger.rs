//! Vocabularies, verb effect groups and object state transition rules.
//!
//! A manipulation action is a verb applied to one or more nouns. Verbs that
//! change an object's shape, color or location carry a transition rule
//! mapping the object from a pre-state to a post-state. Over the course of a
//! segment the pre-state fades out and the post-state fades in, crossing at
//! the middle frame; [`fade_weights`] and [`state_target_vector`] turn that
//! into per-frame regression targets.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// An ordered list of unique names; a symbol's id is its position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymbolTable {
    /// Builds a table from names in order. Duplicates resolve to their first
    /// position; [`Ledger::validate`] reports them.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            index.entry(name.clone()).or_insert(id);
        }
        SymbolTable { names, index }
    }

    /// Appends `name` if absent and returns its id.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (i, n.as_str()))
    }
}

/// What a verb changes about the object it acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EffectGroup {
    ShapeChange,
    ColorChange,
    LocationChange,
    NonStateChanging,
}

impl EffectGroup {
    pub fn changes_state(self) -> bool {
        self != EffectGroup::NonStateChanging
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EffectGroup::ShapeChange => "shape",
            EffectGroup::ColorChange => "color",
            EffectGroup::LocationChange => "location",
            EffectGroup::NonStateChanging => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shape" => Some(EffectGroup::ShapeChange),
            "color" => Some(EffectGroup::ColorChange),
            "location" => Some(EffectGroup::LocationChange),
            "none" => Some(EffectGroup::NonStateChanging),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NounPattern {
    Any,
    Noun(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionRule {
    pub verb: usize,
    pub noun: NounPattern,
    pub pre_state: usize,
    pub post_state: usize,
}

/// A verb applied to an ordered, non-empty list of nouns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionLabel {
    pub verb: usize,
    pub nouns: Vec<usize>,
    pub action: usize,
}

impl ActionLabel {
    /// The noun the transition applies to.
    pub fn primary_noun(&self) -> usize {
        self.nouns[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyName { table: &'static str, id: usize },
    DuplicateName { table: &'static str, name: String },
    GroupCount { verbs: usize, groups: usize },
    UnknownVerb { rule: usize, verb: usize },
    UnknownNoun { rule: usize, noun: usize },
    UnknownState { rule: usize, state: usize },
    SelfTransition { rule: usize },
    RuleOnStaticVerb { rule: usize },
    DuplicateRuleKey { verb: usize, noun: NounPattern },
    MissingRule { verb: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyName { table, id } => write!(f, "empty name in {table} table at id {id}"),
            Violation::DuplicateName { table, name } => {
                write!(f, "duplicate name `{name}` in {table} table")
            }
            Violation::GroupCount { verbs, groups } => {
                write!(f, "group count {groups} differs from verb count {verbs}")
            }
            Violation::UnknownVerb { rule, verb } => write!(f, "rule {rule}: unknown verb {verb}"),
            Violation::UnknownNoun { rule, noun } => write!(f, "rule {rule}: unknown noun {noun}"),
            Violation::UnknownState { rule, state } => {
                write!(f, "rule {rule}: unknown state {state}")
            }
            Violation::SelfTransition { rule } => {
                write!(f, "rule {rule}: pre-state equals post-state")
            }
            Violation::RuleOnStaticVerb { rule } => {
                write!(f, "rule {rule}: verb does not change state")
            }
            Violation::DuplicateRuleKey { verb, noun } => {
                write!(f, "duplicate rule key (verb {verb}, {noun:?})")
            }
            Violation::MissingRule { verb } => {
                write!(f, "state-changing verb {verb} has no rule")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub verb_count: usize,
    pub noun_count: usize,
    pub state_count: usize,
    pub action_count: usize,
    pub rule_count: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub verbs: SymbolTable,
    pub nouns: SymbolTable,
    pub states: SymbolTable,
    pub actions: SymbolTable,
    pub groups: Vec<EffectGroup>,
    pub rules: Vec<TransitionRule>,
}

/// Canonical action name: the verb followed by its nouns, space separated.
pub fn action_name(verb: &str, nouns: &[&str]) -> String {
    let mut s = verb.to_string();
    for n in nouns {
        s.push(' ');
        s.push_str(n);
    }
    s
}

impl Ledger {
    /// The shipped synthetic domain: three shapes, four binary attribute
    /// axes and one wildcard rule per verb.
    pub fn synthetic() -> Ledger {
        let text = include_str!("synthetic.ledger");
        Ledger::parse(text).expect("built-in ledger is valid")
    }

    /// Every (verb, noun) pair, verb-major.
    pub fn cartesian_actions(verbs: &SymbolTable, nouns: &SymbolTable) -> SymbolTable {
        SymbolTable::from_names(
            verbs
                .names()
                .iter()
                .flat_map(|v| nouns.names().iter().map(move |n| action_name(v, &[n]))),
        )
    }

    pub fn group(&self, verb: usize) -> EffectGroup {
        self.groups
            .get(verb)
            .copied()
            .unwrap_or(EffectGroup::NonStateChanging)
    }

    fn verb_name(&self, verb: usize) -> String {
        self.verbs.name(verb).map_or_else(|| verb.to_string(), str::to_string)
    }

    /// Resolves the transition for `verb` acting on `noun`; a noun-specific
    /// rule wins over the verb's wildcard rule.
    pub fn lookup_transition(&self, verb: usize, noun: usize) -> Result<TransitionRule> {
        if verb >= self.verbs.len() {
            return Err(Error::UnknownSymbol {
                table: "verb",
                name: verb.to_string(),
            });
        }
        if noun >= self.nouns.len() {
            return Err(Error::UnknownSymbol {
                table: "noun",
                name: noun.to_string(),
            });
        }
        if !self.group(verb).changes_state() {
            return Err(Error::NonStateChangingVerb(self.verb_name(verb)));
        }
        let mut wildcard = None;
        for rule in self.rules.iter().filter(|r| r.verb == verb) {
            match rule.noun {
                NounPattern::Noun(n) if n == noun => return Ok(*rule),
                NounPattern::Any => wildcard = wildcard.or(Some(*rule)),
                NounPattern::Noun(_) => {}
            }
        }
        wildcard.ok_or_else(|| Error::NoRule {
            verb: self.verb_name(verb),
            noun: self.nouns.name(noun).unwrap_or("?").to_string(),
        })
    }

    /// Builds the label for `verb` applied to `nouns`, resolving the action id
    /// from its canonical name.
    pub fn action_label(&self, verb: usize, nouns: &[usize]) -> Result<ActionLabel> {
        if nouns.is_empty() {
            return Err(Error::Label("action needs at least one noun".into()));
        }
        let verb_name = self.verbs.name(verb).ok_or_else(|| Error::UnknownSymbol {
            table: "verb",
            name: verb.to_string(),
        })?;
        let noun_names = nouns
            .iter()
            .map(|&n| {
                self.nouns.name(n).ok_or_else(|| Error::UnknownSymbol {
                    table: "noun",
                    name: n.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let name = action_name(verb_name, &noun_names);
        let action = self.actions.lookup(&name).ok_or(Error::UnknownSymbol {
            table: "action",
            name,
        })?;
        Ok(ActionLabel {
            verb,
            nouns: nouns.to_vec(),
            action,
        })
    }

    /// Inverse of [`Ledger::action_label`] for single-noun actions.
    pub fn label_for_action(&self, action: usize) -> Result<ActionLabel> {
        let name = self.actions.name(action).ok_or_else(|| Error::UnknownSymbol {
            table: "action",
            name: action.to_string(),
        })?;
        let mut parts = name.split(' ');
        let verb = parts
            .next()
            .and_then(|v| self.verbs.lookup(v))
            .ok_or_else(|| Error::Label(format!("action `{name}` has no known verb")))?;
        let nouns = parts
            .map(|n| {
                self.nouns
                    .lookup(n)
                    .ok_or_else(|| Error::Label(format!("action `{name}` has unknown noun `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.action_label(verb, &nouns)
    }

    /// Checks every structural invariant and reports violations instead of
    /// failing on the first one.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (table, symbols) in [
            ("verb", &self.verbs),
            ("noun", &self.nouns),
            ("state", &self.states),
            ("action", &self.actions),
        ] {
            let mut seen = HashSet::new();
            for (id, name) in symbols.iter() {
                if name.is_empty() {
                    violations.push(Violation::EmptyName { table, id });
                } else if !seen.insert(name) {
                    violations.push(Violation::DuplicateName {
                        table,
                        name: name.to_string(),
                    });
                }
            }
        }
        if self.groups.len() != self.verbs.len() {
            violations.push(Violation::GroupCount {
                verbs: self.verbs.len(),
                groups: self.groups.len(),
            });
        }
        let mut keys = HashSet::new();
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.verb >= self.verbs.len() {
                violations.push(Violation::UnknownVerb {
                    rule: i,
                    verb: rule.verb,
                });
            } else if !self.group(rule.verb).changes_state() {
                violations.push(Violation::RuleOnStaticVerb { rule: i });
            }
            if let NounPattern::Noun(n) = rule.noun {
                if n >= self.nouns.len() {
                    violations.push(Violation::UnknownNoun { rule: i, noun: n });
                }
            }
            for state in [rule.pre_state, rule.post_state] {
                if state >= self.states.len() {
                    violations.push(Violation::UnknownState { rule: i, state });
                }
            }
            if rule.pre_state == rule.post_state {
                violations.push(Violation::SelfTransition { rule: i });
            }
            if !keys.insert((rule.verb, rule.noun)) {
                violations.push(Violation::DuplicateRuleKey {
                    verb: rule.verb,
                    noun: rule.noun,
                });
            }
        }
        for verb in 0..self.verbs.len() {
            if self.group(verb).changes_state() && !self.rules.iter().any(|r| r.verb == verb) {
                violations.push(Violation::MissingRule { verb });
            }
        }
        ValidationReport {
            verb_count: self.verbs.len(),
            noun_count: self.nouns.len(),
            state_count: self.states.len(),
            action_count: self.actions.len(),
            rule_count: self.rules.len(),
            violations,
        }
    }

    /// Parses the sectioned text format and rejects ledgers that violate an
    /// invariant. Without an `[actions]` section the action table is every
    /// verb-noun pair.
    pub fn parse(text: &str) -> Result<Ledger> {
        let ledger = Ledger::parse_unchecked(text)?;
        let report = ledger.validate();
        if let Some(v) = report.violations.first() {
            return Err(Error::InvalidLedger(v.to_string()));
        }
        Ok(ledger)
    }

    /// Parses without enforcing invariants, for tooling that reports them.
    pub fn parse_unchecked(text: &str) -> Result<Ledger> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            None,
            Verbs,
            Nouns,
            States,
            Actions,
            Groups,
            Rules,
        }
        let mut section = Section::None;
        let mut verbs = Vec::new();
        let mut nouns = Vec::new();
        let mut states = Vec::new();
        let mut actions: Option<Vec<String>> = None;
        let mut group_lines = Vec::new();
        let mut rule_lines = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = match &line[1..line.len() - 1] {
                    "verbs" => Section::Verbs,
                    "nouns" => Section::Nouns,
                    "states" => Section::States,
                    "actions" => {
                        actions.get_or_insert_with(Vec::new);
                        Section::Actions
                    }
                    "groups" => Section::Groups,
                    "rules" => Section::Rules,
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("unknown section `{other}`"),
                        })
                    }
                };
                continue;
            }
            match section {
                Section::None => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "entry outside of any section".into(),
                    })
                }
                Section::Verbs => verbs.push(line.to_string()),
                Section::Nouns => nouns.push(line.to_string()),
                Section::States => states.push(line.to_string()),
                Section::Actions => actions.get_or_insert_with(Vec::new).push(line.to_string()),
                Section::Groups => group_lines.push((line_no, line.to_string())),
                Section::Rules => rule_lines.push((line_no, line.to_string())),
            }
        }

        let verbs = SymbolTable::from_names(verbs);
        let nouns = SymbolTable::from_names(nouns);
        let states = SymbolTable::from_names(states);
        let actions = match actions {
            Some(a) => SymbolTable::from_names(a),
            None => Ledger::cartesian_actions(&verbs, &nouns),
        };

        let lookup = |table: &SymbolTable, kind: &str, name: &str, line: usize| {
            table.lookup(name).ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown {kind} `{name}`"),
            })
        };

        let mut groups = vec![None; verbs.len()];
        for (line, text) in &group_lines {
            let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: *line,
                    msg: "group lines are `verb<TAB>shape|color|location|none`".into(),
                });
            }
            let verb = lookup(&verbs, "verb", fields[0], *line)?;
            let group = EffectGroup::parse(fields[1]).ok_or_else(|| Error::Parse {
                line: *line,
                msg: format!("unknown effect group `{}`", fields[1]),
            })?;
            groups[verb] = Some(group);
        }
        let groups = groups
            .into_iter()
            .map(|g| g.unwrap_or(EffectGroup::NonStateChanging))
            .collect();

        let mut rules = Vec::with_capacity(rule_lines.len());
        for (line, text) in &rule_lines {
            let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: *line,
                    msg: "rule lines are `verb<TAB>noun-or-*<TAB>pre<TAB>post`".into(),
                });
            }
            let noun = if fields[1] == "*" {
                NounPattern::Any
            } else {
                NounPattern::Noun(lookup(&nouns, "noun", fields[1], *line)?)
            };
            rules.push(TransitionRule {
                verb: lookup(&verbs, "verb", fields[0], *line)?,
                noun,
                pre_state: lookup(&states, "state", fields[2], *line)?,
                post_state: lookup(&states, "state", fields[3], *line)?,
            });
        }

        Ok(Ledger {
            verbs,
            nouns,
            states,
            actions,
            groups,
            rules,
        })
    }

    pub fn load(path: &Path) -> Result<Ledger> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ledger::parse(&text)
    }

    pub fn load_unchecked(path: &Path) -> Result<Ledger> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ledger::parse_unchecked(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, lines: &mut dyn Iterator<Item = String>| {
            out.push_str(&format!("[{title}]\n"));
            for l in lines {
                out.push_str(&l);
                out.push('\n');
            }
            out.push('\n');
        };
        section("verbs", &mut self.verbs.names().iter().cloned());
        section("nouns", &mut self.nouns.names().iter().cloned());
        section("states", &mut self.states.names().iter().cloned());
        if self.actions != Ledger::cartesian_actions(&self.verbs, &self.nouns) {
            section("actions", &mut self.actions.names().iter().cloned());
        }
        section(
            "groups",
            &mut self
                .verbs
                .iter()
                .map(|(id, v)| format!("{v}\t{}", self.group(id).as_str())),
        );
        let name = |t: &SymbolTable, id: usize| t.name(id).unwrap_or("?").to_string();
        section(
            "rules",
            &mut self.rules.iter().map(|r| {
                let noun = match r.noun {
                    NounPattern::Any => "*".to_string(),
                    NounPattern::Noun(n) => name(&self.nouns, n),
                };
                format!(
                    "{}\t{}\t{}\t{}",
                    name(&self.verbs, r.verb),
                    noun,
                    name(&self.states, r.pre_state),
                    name(&self.states, r.post_state)
                )
            }),
        );
        out
    }
}

/// Pre- and post-state weights at `pos` within a segment of `len` frames.
///
/// The post weight ramps linearly from 0 at the first frame to 1 at the last
/// and the two weights always sum to exactly 1. A single-frame segment sits
/// at the crossover.
pub fn fade_weights(pos: usize, len: usize) -> Result<(f64, f64)> {
    if pos >= len {
        return Err(Error::OutOfRange { pos, len });
    }
    let tau = if len == 1 {
        0.5
    } else {
        pos as f64 / (len - 1) as f64
    };
    Ok((1.0 - tau, tau))
}

/// Per-frame multi-label target over the state vocabulary: static states at
/// 1, the rule's pre- and post-state at their fade weights, zero elsewhere.
pub fn state_target_vector(
    rule: &TransitionRule,
    static_states: &BTreeSet<usize>,
    pos: usize,
    len: usize,
    state_count: usize,
) -> Result<Vec<f64>> {
    for s in [rule.pre_state, rule.post_state] {
        if static_states.contains(&s) {
            return Err(Error::StateCollision(s));
        }
    }
    if let Some(&bad) = static_states
        .iter()
        .chain([rule.pre_state, rule.post_state].iter())
        .find(|&&s| s >= state_count)
    {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: state_count,
        });
    }
    let (w_pre, w_post) = fade_weights(pos, len)?;
    let mut target = vec![0.0; state_count];
    for &s in static_states {
        target[s] = 1.0;
    }
    target[rule.pre_state] = w_pre;
    target[rule.post_state] = w_post;
    Ok(target)
}

/// One annotated span of a source video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMeta {
    pub video_id: String,
    pub start_frame: u64,
    pub stop_frame: u64,
    pub label: ActionLabel,
}

#[derive(Debug, Clone)]
pub struct IngestedAnnotations {
    /// Vocabularies with every verb marked non-state-changing and no rules;
    /// groups and rules are filled in by hand.
    pub ledger: Ledger,
    pub segments: Vec<SegmentMeta>,
}

const ANNOTATION_COLUMNS: [&str; 7] = [
    "video_id",
    "start_frame",
    "stop_frame",
    "verb",
    "verb_class",
    "noun",
    "noun_class",
];

/// Reads comma-separated action annotations into vocabularies, segment
/// metadata and a rule-less ledger skeleton.
pub fn ingest_annotations<R: std::io::Read>(reader: R) -> Result<IngestedAnnotations> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(ANNOTATION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MalformedRow {
                row: 1,
                reason: format!("missing column `{name}`"),
            })?;
    }

    let mut verbs = SymbolTable::default();
    let mut nouns = SymbolTable::default();
    let mut actions = SymbolTable::default();
    let mut segments = Vec::new();
    for (i, record) in csv.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |c: usize, name: &str| {
            record
                .get(cols[c])
                .map(str::trim)
                .ok_or_else(|| Error::MalformedRow {
                    row,
                    reason: format!("missing column `{name}`"),
                })
        };
        let frame = |c: usize| -> Result<u64> {
            let name = ANNOTATION_COLUMNS[c];
            field(c, name)?.parse().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("non-numeric `{name}`"),
            })
        };
        let start = frame(1)?;
        let stop = frame(2)?;
        if start >= stop {
            return Err(Error::MalformedRow {
                row,
                reason: format!("start_frame {start} is not before stop_frame {stop}"),
            });
        }
        let verb_name = field(3, "verb")?;
        let noun_name = field(5, "noun")?;
        if verb_name.is_empty() || noun_name.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty verb or noun".into(),
            });
        }
        let verb = verbs.intern(verb_name);
        let noun = nouns.intern(noun_name);
        let action = actions.intern(&action_name(verb_name, &[noun_name]));
        segments.push(SegmentMeta {
            video_id: field(0, "video_id")?.to_string(),
            start_frame: start,
            stop_frame: stop,
            label: ActionLabel {
                verb,
                nouns: vec![noun],
                action,
            },
        });
    }

    let groups = vec![EffectGroup::NonStateChanging; verbs.len()];
    Ok(IngestedAnnotations {
        ledger: Ledger {
            verbs,
            nouns,
            states: SymbolTable::default(),
            actions,
            groups,
            rules: Vec::new(),
        },
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(pre: usize, post: usize) -> TransitionRule {
        TransitionRule {
            verb: 0,
            noun: NounPattern::Any,
            pre_state: pre,
            post_state: post,
        }
    }

    fn kitchen() -> Ledger {
        Ledger::parse(
            "[verbs]\nopen\nremove\ncheck\n[nouns]\nfridge\nlid\ngarlic\npan\n\
             [states]\nclosed\nopened\nunpeeled\npeeled\n\
             [groups]\nopen\tshape\nremove\tshape\ncheck\tnone\n\
             [rules]\nopen\t*\tclosed\topened\n\
             remove\tlid\tclosed\topened\nremove\tgarlic\tunpeeled\tpeeled\n",
        )
        .unwrap()
    }

    #[test]
    fn wildcard_rule_resolves_open_fridge() {
        let l = kitchen();
        let r = l.lookup_transition(0, 0).unwrap();
        assert_eq!(l.states.name(r.pre_state), Some("closed"));
        assert_eq!(l.states.name(r.post_state), Some("opened"));
    }

    #[test]
    fn noun_specific_rules_disambiguate_remove() {
        let l = kitchen();
        let lid = l.lookup_transition(1, 1).unwrap();
        let garlic = l.lookup_transition(1, 2).unwrap();
        assert_eq!(l.states.name(lid.post_state), Some("opened"));
        assert_eq!(l.states.name(garlic.post_state), Some("peeled"));
        assert!(matches!(l.lookup_transition(1, 3), Err(Error::NoRule { .. })));
    }

    #[test]
    fn check_is_not_state_changing() {
        let l = kitchen();
        assert!(matches!(
            l.lookup_transition(2, 3),
            Err(Error::NonStateChangingVerb(v)) if v == "check"
        ));
    }

    #[test]
    fn specific_rule_beats_wildcard() {
        let mut l = kitchen();
        l.rules.push(TransitionRule {
            verb: 0,
            noun: NounPattern::Noun(0),
            pre_state: 2,
            post_state: 3,
        });
        assert_eq!(l.lookup_transition(0, 0).unwrap().pre_state, 2);
        assert_eq!(l.lookup_transition(0, 1).unwrap().pre_state, 0);
    }

    #[test]
    fn fade_examples() {
        assert_eq!(fade_weights(0, 30).unwrap(), (1.0, 0.0));
        assert_eq!(fade_weights(15, 31).unwrap(), (0.5, 0.5));
        assert_eq!(fade_weights(29, 30).unwrap(), (0.0, 1.0));
        assert_eq!(fade_weights(0, 1).unwrap(), (0.5, 0.5));
        assert!(matches!(fade_weights(30, 30), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn state_target_examples() {
        let stat: BTreeSet<usize> = [0].into();
        assert_eq!(
            state_target_vector(&rule(1, 3), &stat, 0, 30, 4).unwrap(),
            vec![1.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            state_target_vector(&rule(1, 3), &stat, 15, 31, 4).unwrap(),
            vec![1.0, 0.5, 0.0, 0.5]
        );
        assert_eq!(
            state_target_vector(&rule(1, 3), &BTreeSet::new(), 29, 30, 4).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0]
        );
        let clash: BTreeSet<usize> = [3].into();
        assert!(matches!(
            state_target_vector(&rule(1, 3), &clash, 0, 30, 4),
            Err(Error::StateCollision(3))
        ));
    }

    #[test]
    fn synthetic_ledger_counts() {
        let report = Ledger::synthetic().validate();
        assert_eq!(report.state_count, 8);
        assert_eq!(report.rule_count, 6);
        assert_eq!(report.verb_count, 6);
        assert_eq!(report.noun_count, 3);
        assert_eq!(report.action_count, 18);
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn validate_flags_duplicates_and_unknown_states() {
        let mut l = Ledger::synthetic();
        let open = l.verbs.lookup("open").unwrap();
        let dup = *l.rules.iter().find(|r| r.verb == open).unwrap();
        l.rules.push(dup);
        let msgs: Vec<String> = l.validate().violations.iter().map(|v| v.to_string()).collect();
        assert!(msgs.iter().any(|m| m.contains("duplicate rule key")), "{msgs:?}");

        let mut l = Ledger::synthetic();
        l.rules[0].post_state = 8;
        let msgs: Vec<String> = l.validate().violations.iter().map(|v| v.to_string()).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown state")), "{msgs:?}");
    }

    #[test]
    fn text_round_trip() {
        let l = Ledger::synthetic();
        assert_eq!(Ledger::parse(&l.to_text()).unwrap(), l);
        let k = kitchen();
        assert_eq!(Ledger::parse(&k.to_text()).unwrap(), k);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Ledger::parse("[verbs]\nopen\n[rules]\nopen\t*\tclosed\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = Ledger::parse("open\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    const HEADER: &str = "video_id,start_frame,stop_frame,verb,verb_class,noun,noun_class\n";

    #[test]
    fn ingest_deduplicates_vocabularies() {
        let csv = format!(
            "{HEADER}P01_01,10,50,open,3,fridge,12\nP01_01,60,90,cut,7,tomato,4\nP01_02,5,40,open,3,door,8\n"
        );
        let ing = ingest_annotations(csv.as_bytes()).unwrap();
        assert_eq!(ing.ledger.verbs.len(), 2);
        assert_eq!(ing.ledger.nouns.len(), 3);
        assert_eq!(ing.segments.len(), 3);
        assert_eq!(ing.segments[2].label.verb, 0);
        assert_eq!(ing.ledger.actions.name(2), Some("open door"));
        assert!(ing.ledger.rules.is_empty());
        assert!(ing.ledger.validate().is_valid());
    }

    #[test]
    fn ingest_rejects_bad_rows() {
        let csv = format!("{HEADER}P01_01,50,50,open,3,fridge,12\n");
        assert!(matches!(
            ingest_annotations(csv.as_bytes()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
        let csv = format!("{HEADER}P01_01,1,5,open,3,fridge,12\nP01_01,x,9,open,3,fridge,12\n");
        assert!(matches!(
            ingest_annotations(csv.as_bytes()),
            Err(Error::MalformedRow { row: 3, .. })
        ));
        let csv = "video_id,start_frame,verb,noun\nP01,1,open,lid\n";
        assert!(matches!(
            ingest_annotations(csv.as_bytes()),
            Err(Error::MalformedRow { row: 1, .. })
        ));
    }
}
