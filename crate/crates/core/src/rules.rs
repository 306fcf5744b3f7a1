//! Prioritized condition → action rules.
//!
//! Rule files hold one rule per line:
//!
//! ```text
//! # comment
//! R1 10 amount > 10000 AND region = "offshore" -> escalate
//! R2 20 amount <= 10000 -> approve
//! ```
//!
//! The first rule whose condition holds, in (priority, file order), decides
//! the case. Conditions compare a field with a literal (`= != ≠ < <= ≤ > >=
//! ≥`) and combine with `AND`, `OR`, `NOT` and parentheses. A comparison
//! against a field the case does not carry (for example `doc_class` on an
//! event without a document) is false.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AnomalyFlag, ComplianceCase, Event};

pub const MAX_DEPTH: usize = 32;

/// Small shipped rule set used by the demos and presets.
pub const DEMO_RULES: &str = include_str!("../rules/demo.rules");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("line {line}: duplicate rule id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown field {field:?}")]
    UnknownField { line: usize, field: String },
    #[error("rule {rule}: cannot compare {field} ({expected}) with {found}")]
    TypeMismatch { rule: String, field: String, expected: &'static str, found: &'static str },
    #[error("coverage of an empty batch")]
    EmptyBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Approve,
    Reject,
    Escalate,
}

impl RuleAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleAction::Approve => "approve",
            RuleAction::Reject => "reject",
            RuleAction::Escalate => "escalate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "approve" => Some(RuleAction::Approve),
            "reject" => Some(RuleAction::Reject),
            "escalate" => Some(RuleAction::Escalate),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Amount,
    Timestamp,
    Channel,
    Region,
    Account,
    RiskScore,
    AnomalyFlag,
    DocClass,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Amount,
        Field::Timestamp,
        Field::Channel,
        Field::Region,
        Field::Account,
        Field::RiskScore,
        Field::AnomalyFlag,
        Field::DocClass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Amount => "amount",
            Field::Timestamp => "timestamp",
            Field::Channel => "channel",
            Field::Region => "region",
            Field::Account => "account",
            Field::RiskScore => "risk_score",
            Field::AnomalyFlag => "anomaly_flag",
            Field::DocClass => "doc_class",
        }
    }

    fn lookup(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn is_numeric(self) -> bool {
        matches!(self, Field::Amount | Field::Timestamp | Field::RiskScore)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl Literal {
    fn kind(&self) -> &'static str {
        match self {
            Literal::Number(_) => "number",
            Literal::Text(_) => "string",
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Text(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Condition {
    Cmp { field: Field, op: CmpOp, value: Literal },
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    pub fn depth(&self) -> usize {
        match self {
            Condition::Cmp { .. } => 1,
            Condition::Not(c) => 1 + c.depth(),
            Condition::And(a, b) | Condition::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Condition::Or(..) => 0,
            Condition::And(..) => 1,
            Condition::Not(..) | Condition::Cmp { .. } => 2,
        }
    }

    fn type_check(&self) -> Result<(), (Field, &'static str)> {
        match self {
            Condition::Cmp { field, value, .. } => {
                let ok = matches!((field.is_numeric(), value), (true, Literal::Number(_)) | (false, Literal::Text(_)));
                if ok {
                    Ok(())
                } else {
                    Err((*field, value.kind()))
                }
            }
            Condition::Not(c) => c.type_check(),
            Condition::And(a, b) | Condition::Or(a, b) => a.type_check().and_then(|_| b.type_check()),
        }
    }

    pub fn eval(&self, input: &RuleInput<'_>) -> Result<bool, (Field, &'static str)> {
        Ok(match self {
            Condition::Cmp { field, op, value } => match (input.value(*field), value) {
                (FieldValue::Missing, _) => false,
                (FieldValue::Number(x), Literal::Number(y)) => match x.partial_cmp(y) {
                    Some(ord) => op.holds(ord),
                    None => false,
                },
                (FieldValue::Text(x), Literal::Text(y)) => op.holds(x.as_bytes().cmp(y.as_bytes())),
                (_, lit) => return Err((*field, lit.kind())),
            },
            Condition::Not(c) => !c.eval(input)?,
            Condition::And(a, b) => a.eval(input)? && b.eval(input)?,
            Condition::Or(a, b) => a.eval(input)? || b.eval(input)?,
        })
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let wrap = self.precedence() < parent;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Condition::Cmp { field, op, value } => write!(f, "{} {} {value}", field.name(), op.symbol())?,
            Condition::Not(c) => {
                f.write_str("NOT ")?;
                c.write(f, 2)?;
            }
            Condition::And(a, b) => {
                a.write(f, 1)?;
                f.write_str(" AND ")?;
                b.write(f, 2)?;
            }
            Condition::Or(a, b) => {
                a.write(f, 0)?;
                f.write_str(" OR ")?;
                b.write(f, 1)?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: String,
    pub priority: i64,
    pub condition: Condition,
    pub action: RuleAction,
    /// Position in the source file, used as the tie-break.
    pub ordinal: usize,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} -> {}", self.id, self.priority, self.condition, self.action.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDecision<'r> {
    pub action: RuleAction,
    pub matched_rule_id: Option<&'r str>,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    pub default_action: RuleAction,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self { rules: Vec::new(), default_action: RuleAction::Escalate }
    }
}

impl RuleSet {
    /// Sorts stably by (priority, ordinal).
    pub fn new(mut rules: Vec<Rule>) -> Self {
        rules.sort_by_key(|r| (r.priority, r.ordinal));
        Self { rules, default_action: RuleAction::Escalate }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// First matching rule wins; no match falls back to `default_action`.
    pub fn evaluate(&self, input: &RuleInput<'_>) -> Result<RuleDecision<'_>, RuleError> {
        for rule in &self.rules {
            let hit = rule.condition.eval(input).map_err(|(field, found)| RuleError::TypeMismatch {
                rule: rule.id.clone(),
                field: field.name().to_string(),
                expected: if field.is_numeric() { "number" } else { "string" },
                found,
            })?;
            if hit {
                return Ok(RuleDecision { action: rule.action, matched_rule_id: Some(&rule.id), matched: true });
            }
        }
        Ok(RuleDecision { action: self.default_action, matched_rule_id: None, matched: false })
    }

    /// Fraction of inputs decided by some rule.
    pub fn coverage<'a, I>(&self, inputs: I) -> Result<f64, RuleError>
    where
        I: IntoIterator<Item = RuleInput<'a>>,
    {
        let (mut total, mut matched) = (0usize, 0usize);
        for input in inputs {
            total += 1;
            if self.evaluate(&input)?.matched {
                matched += 1;
            }
        }
        if total == 0 {
            return Err(RuleError::EmptyBatch);
        }
        Ok(matched as f64 / total as f64)
    }

    /// One rule per line in evaluation order.
    pub fn canonical(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// What a condition can see: the event, plus the case once it has been scored.
#[derive(Clone, Copy, Debug)]
pub struct RuleInput<'a> {
    pub event: &'a Event,
    pub case: Option<&'a ComplianceCase>,
}

enum FieldValue<'a> {
    Number(f64),
    Text(&'a str),
    Missing,
}

impl<'a> RuleInput<'a> {
    pub fn event(event: &'a Event) -> Self {
        Self { event, case: None }
    }

    fn value(&self, field: Field) -> FieldValue<'a> {
        let e = self.event;
        match field {
            Field::Amount => FieldValue::Number(e.amount),
            Field::Timestamp => FieldValue::Number(e.timestamp as f64),
            Field::Channel => FieldValue::Text(e.channel.as_str()),
            Field::Region => FieldValue::Text(&e.region),
            Field::Account => FieldValue::Text(&e.account),
            Field::RiskScore => self.case.map_or(FieldValue::Missing, |c| FieldValue::Number(c.risk_score)),
            Field::AnomalyFlag => self.case.map_or(FieldValue::Missing, |c| {
                FieldValue::Text(match c.anomaly_flag {
                    AnomalyFlag::Inlier => "inlier",
                    AnomalyFlag::Outlier => "outlier",
                })
            }),
            Field::DocClass => match self.case.and_then(|c| c.doc_class.as_deref()) {
                Some(s) => FieldValue::Text(s),
                None => FieldValue::Missing,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Text(String),
    Op(CmpOp),
    LParen,
    RParen,
}

fn lex(src: &str, line: usize) -> Result<Vec<Token>, RuleError> {
    let err = |message: String| RuleError::SyntaxError { line, message };
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '=' => {
                out.push(Token::Op(CmpOp::Eq));
                i += 1;
            }
            '≠' => {
                out.push(Token::Op(CmpOp::Ne));
                i += 1;
            }
            '≤' => {
                out.push(Token::Op(CmpOp::Le));
                i += 1;
            }
            '≥' => {
                out.push(Token::Op(CmpOp::Ge));
                i += 1;
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                out.push(Token::Op(CmpOp::Ne));
                i += 2;
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                out.push(Token::Op(match (c, eq) {
                    ('<', true) => CmpOp::Le,
                    ('<', false) => CmpOp::Lt,
                    (_, true) => CmpOp::Ge,
                    _ => CmpOp::Gt,
                }));
                i += if eq { 2 } else { 1 };
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err("unterminated string".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let next = chars.get(i + 1).ok_or_else(|| err("dangling escape".into()))?;
                            s.push(*next);
                            i += 2;
                        }
                        Some(ch) => {
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token::Text(s));
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_digit() || matches!(chars[i], '.' | 'e' | 'E' | '_')) {
                    i += 1;
                }
                let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
                let n: f64 = text.parse().map_err(|_| err(format!("bad number {text:?}")))?;
                if !n.is_finite() {
                    return Err(err(format!("number {text:?} is not finite")));
                }
                out.push(Token::Number(n));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(err(format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn err(&self, message: impl Into<String>) -> RuleError {
        RuleError::SyntaxError { line: self.line, message: message.into() }
    }

    fn keyword(&self, word: &str) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(word))
    }

    fn or(&mut self, depth: usize) -> Result<Condition, RuleError> {
        let mut left = self.and(depth)?;
        while self.keyword("OR") {
            self.pos += 1;
            let right = self.and(depth)?;
            left = Condition::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self, depth: usize) -> Result<Condition, RuleError> {
        let mut left = self.not(depth)?;
        while self.keyword("AND") {
            self.pos += 1;
            let right = self.not(depth)?;
            left = Condition::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not(&mut self, depth: usize) -> Result<Condition, RuleError> {
        if depth > MAX_DEPTH {
            return Err(self.err(format!("expression nested deeper than {MAX_DEPTH}")));
        }
        if self.keyword("NOT") {
            self.pos += 1;
            return Ok(Condition::Not(Box::new(self.not(depth + 1)?)));
        }
        self.primary(depth)
    }

    fn primary(&mut self, depth: usize) -> Result<Condition, RuleError> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.or(depth + 1)?;
                if self.tokens.get(self.pos) != Some(&Token::RParen) {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                let field = Field::lookup(&name)
                    .ok_or(RuleError::UnknownField { line: self.line, field: name.clone() })?;
                self.pos += 1;
                let op = match self.tokens.get(self.pos) {
                    Some(Token::Op(op)) => *op,
                    _ => return Err(self.err(format!("expected comparison operator after {name}"))),
                };
                self.pos += 1;
                let value = match self.tokens.get(self.pos) {
                    Some(Token::Number(n)) => Literal::Number(*n),
                    Some(Token::Text(s)) => Literal::Text(s.clone()),
                    Some(Token::Ident(s)) if Field::lookup(s).is_none() && !is_keyword(s) => Literal::Text(s.clone()),
                    Some(_) => return Err(self.err(format!("expected a literal after {name} {}", op.symbol()))),
                    None => return Err(self.err(format!("expression ends after {name} {}", op.symbol()))),
                };
                self.pos += 1;
                Ok(Condition::Cmp { field, op, value })
            }
            Some(other) => Err(self.err(format!("unexpected token {other:?}"))),
            None => Err(self.err("expected a condition")),
        }
    }
}

fn is_keyword(s: &str) -> bool {
    ["AND", "OR", "NOT"].iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn parse_condition(src: &str, line: usize) -> Result<Condition, RuleError> {
    let mut p = Parser { tokens: lex(src, line)?, pos: 0, line };
    let cond = p.or(1)?;
    if p.pos != p.tokens.len() {
        return Err(p.err(format!("unexpected trailing token {:?}", p.tokens[p.pos])));
    }
    if cond.depth() > MAX_DEPTH {
        return Err(p.err(format!("expression nested deeper than {MAX_DEPTH}")));
    }
    Ok(cond)
}

/// Parses a rule file; the first error wins and carries its 1-based line number.
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleError> {
    let mut rules = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let syntax = |message: &str| RuleError::SyntaxError { line, message: message.to_string() };
        let (id, rest) = body.split_once(char::is_whitespace).ok_or_else(|| syntax("expected `<id> <priority> <condition> -> <action>`"))?;
        let (prio, rest) = rest.trim_start().split_once(char::is_whitespace).ok_or_else(|| syntax("missing condition"))?;
        let priority: i64 = prio.parse().map_err(|_| syntax(&format!("priority {prio:?} is not an integer")))?;
        let (cond_src, action_src) = rest.rsplit_once("->").ok_or_else(|| syntax("missing `-> <action>`"))?;
        let action = RuleAction::parse(action_src.trim())
            .ok_or_else(|| syntax(&format!("unknown action {:?}", action_src.trim())))?;
        let condition = parse_condition(cond_src, line)?;
        if let Err((field, found)) = condition.type_check() {
            return Err(RuleError::TypeMismatch {
                rule: id.to_string(),
                field: field.name().to_string(),
                expected: if field.is_numeric() { "number" } else { "string" },
                found,
            });
        }
        if !ids.insert(id.to_string()) {
            return Err(RuleError::DuplicateId { line, id: id.to_string() });
        }
        rules.push(Rule { id: id.to_string(), priority, condition, action, ordinal: rules.len() });
    }
    Ok(RuleSet::new(rules))
}

/// Drops a `#` comment that is not inside a string literal.
fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            '#' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Channel;

    fn event(amount: f64, region: &str) -> Event {
        Event {
            id: "e1".into(),
            timestamp: 1_000,
            account: "acct-1".into(),
            amount,
            channel: Channel::Online,
            region: region.into(),
            features: None,
            doc_text: None,
        }
    }

    #[test]
    fn parses_single_rule() {
        let rs = parse_rules(r#"R1 10 amount > 10000 AND region = "offshore" -> escalate"#).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.rules()[0].priority, 10);
        assert_eq!(rs.rules()[0].action, RuleAction::Escalate);
        assert_eq!(rs.canonical(), "R1 10 amount > 10000 AND region = \"offshore\" -> escalate\n");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_rules("R1 1 amount > 1 -> approve\nR1 2 amount > 2 -> reject").unwrap_err();
        assert_eq!(err, RuleError::DuplicateId { line: 2, id: "R1".into() });
    }

    #[test]
    fn truncated_expression_is_syntax_error_on_line_one() {
        assert!(matches!(parse_rules("R2 5 amount >"), Err(RuleError::SyntaxError { line: 1, .. })));
        assert!(matches!(parse_rules("R2 5 amount > -> approve"), Err(RuleError::SyntaxError { line: 1, .. })));
    }

    #[test]
    fn unknown_field_and_type_mismatch() {
        assert_eq!(
            parse_rules("\n# c\nX 1 colour = \"red\" -> approve").unwrap_err(),
            RuleError::UnknownField { line: 3, field: "colour".into() }
        );
        assert!(matches!(parse_rules("X 1 amount = \"big\" -> approve"), Err(RuleError::TypeMismatch { .. })));
        assert!(matches!(parse_rules("X 1 region > 5 -> approve"), Err(RuleError::TypeMismatch { .. })));
    }

    #[test]
    fn empty_ruleset_escalates_unmatched() {
        let rs = RuleSet::default();
        let e = event(5.0, "eu");
        let d = rs.evaluate(&RuleInput::event(&e)).unwrap();
        assert_eq!(d, RuleDecision { action: RuleAction::Escalate, matched_rule_id: None, matched: false });
        assert_eq!(rs.coverage([RuleInput::event(&e)]).unwrap(), 0.0);
    }

    #[test]
    fn single_match_trace() {
        let rs = parse_rules("R1 10 amount > 10000 -> escalate\nR2 20 amount <= 10000 -> approve").unwrap();
        let e = event(5000.0, "eu");
        let d = rs.evaluate(&RuleInput::event(&e)).unwrap();
        assert_eq!((d.action, d.matched_rule_id), (RuleAction::Approve, Some("R2")));
    }

    #[test]
    fn equal_priority_earlier_wins_and_lower_priority_number_beats_file_order() {
        let rs = parse_rules("A 5 amount > 1 -> reject\nB 5 amount > 1 -> approve\nC 1 amount > 100 -> escalate").unwrap();
        let small = event(50.0, "eu");
        assert_eq!(rs.evaluate(&RuleInput::event(&small)).unwrap().matched_rule_id, Some("A"));
        let big = event(500.0, "eu");
        assert_eq!(rs.evaluate(&RuleInput::event(&big)).unwrap().matched_rule_id, Some("C"));
    }

    #[test]
    fn catch_all_covers_everything() {
        let rs = parse_rules("ALL 100 amount ≥ 0 -> approve").unwrap();
        let events: Vec<Event> = (0..10).map(|i| event(i as f64 * 3.0, "us")).collect();
        assert_eq!(rs.coverage(events.iter().map(RuleInput::event)).unwrap(), 1.0);
        assert_eq!(rs.coverage(std::iter::empty()), Err(RuleError::EmptyBatch));
    }

    #[test]
    fn operators_and_precedence() {
        let rs = parse_rules(
            "A 1 NOT amount < 10 AND region ≠ \"eu\" OR amount = 3 -> reject\nB 2 (amount >= 1 OR amount <= 0) AND NOT region = us -> approve",
        )
        .unwrap();
        assert_eq!(
            rs.canonical(),
            "A 1 NOT amount < 10 AND region != \"eu\" OR amount = 3 -> reject\n\
             B 2 (amount >= 1 OR amount <= 0) AND NOT region = \"us\" -> approve\n"
        );
        let dec = |amount, region| rs.evaluate(&RuleInput::event(&event(amount, region))).unwrap().matched_rule_id;
        assert_eq!(dec(3.0, "eu"), Some("A"));
        assert_eq!(dec(20.0, "us"), Some("A"));
        assert_eq!(dec(20.0, "eu"), Some("B"));
        assert_eq!(dec(5.0, "us"), None);
    }

    #[test]
    fn canonical_form_reparses_identically() {
        let rs = parse_rules(DEMO_RULES).unwrap();
        let again = parse_rules(&rs.canonical()).unwrap();
        assert_eq!(again.canonical(), rs.canonical());
    }

    #[test]
    fn demo_rules_have_small_amount_approval() {
        let rs = parse_rules(DEMO_RULES).unwrap();
        assert!(rs.len() >= 40);
        let e = event(80.0, "domestic");
        let d = rs.evaluate(&RuleInput::event(&e)).unwrap();
        assert_eq!(d.action, RuleAction::Approve);
    }

    #[test]
    fn depth_limit() {
        let nested = format!("D 1 {}amount > 1{} -> approve", "(".repeat(40), ")".repeat(40));
        assert!(matches!(parse_rules(&nested), Err(RuleError::SyntaxError { line: 1, .. })));
        let ok = format!("D 1 {}amount > 1{} -> approve", "(".repeat(10), ")".repeat(10));
        assert!(parse_rules(&ok).is_ok());
    }

    #[test]
    fn missing_fields_never_match() {
        let rs = parse_rules("D 1 doc_class = \"privacy\" -> reject\nE 2 NOT risk_score > 0.5 -> approve").unwrap();
        let e = event(10.0, "eu");
        let d = rs.evaluate(&RuleInput::event(&e)).unwrap();
        assert_eq!(d.matched_rule_id, Some("E"));
    }

    #[test]
    fn comments_and_hash_inside_strings() {
        let rs = parse_rules("# header\nR 1 region = \"a#b\" -> reject # trailing\n\n").unwrap();
        assert_eq!(rs.rules()[0].condition.to_string(), "region = \"a#b\"");
    }
}
