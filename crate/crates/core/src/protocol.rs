//! Prompt conditions, chat rendering and strict decision parsing.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::Direction;
use crate::evidence::{format_intensity, Deficit, Evidence, EvidenceKind, EvidenceSet};

pub const TASK: &str = "Refer to the evidence below to make a final investment decision for the given stock.";

/// Output-requirements block appended to every decision prompt.
pub const OUTPUT_REQUIREMENTS: &str = "Output Requirements (JSON)\n\
Return a single, valid JSON object containing:\n\
\"decision\": (buy or sell)\n\
\"reason\": A brief justification for your decision.\n\
- Do not include \"hold\" as an option — you must choose one side.\n\
- The response must start with { and end with }.\n\
- Do not include any text outside of the JSON object.";

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("insufficient evidence: {0}")]
    Insufficient(#[from] Deficit),
    #[error("volume condition needs counter_n > support_n, got support {support_n} / counter {counter_n}")]
    VolumeContract { support_n: usize, counter_n: usize },
    #[error("intensity increment must be >= 0, got {0}")]
    NegativeDelta(f64),
    #[error("k_per_side must be positive")]
    ZeroK,
    #[error("style pair must occupy opposite sides")]
    StylePairSides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Elicitation,
    Verification,
}

/// Task, ordered evidence context and the fixed {buy, sell} action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub stage: PromptStage,
    pub task: String,
    pub context: Vec<Evidence>,
    pub actions: [Direction; 2],
    /// For style-conflict prompts: the view whose evidence argues for buying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buy_view: Option<EvidenceKind>,
}

impl PromptSpec {
    fn new(stage: PromptStage, context: Vec<Evidence>) -> Self {
        Self { stage, task: TASK.to_string(), context, actions: [Direction::Buy, Direction::Sell], buy_view: None }
    }

    /// (direction, rendered intensity) multiset of the context, sorted.
    pub fn composition(&self) -> Vec<(Direction, String)> {
        let mut out: Vec<_> = self.context.iter().map(|e| (e.direction, format_intensity(e.intensity_pct))).collect();
        out.sort();
        out
    }
}

/// What kind of prompt a trial used. `Display` gives the stable key that
/// feeds seed derivation, so it must not change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConditionLabel {
    Balanced { k_per_side: usize },
    Volume { preferred: Direction, support_n: usize, counter_n: usize },
    Intensity { preferred: Direction, k_per_side: usize, base_pct: f64, delta_pct: f64 },
    Style { momentum_side: Direction },
}

impl ConditionLabel {
    /// Direction the decision is compared against when counting flips.
    pub fn preferred(&self) -> Option<Direction> {
        match self {
            ConditionLabel::Volume { preferred, .. } | ConditionLabel::Intensity { preferred, .. } => Some(*preferred),
            _ => None,
        }
    }

    /// Share of counter evidence in a volume condition.
    pub fn counter_share(&self) -> Option<f64> {
        match self {
            ConditionLabel::Volume { support_n, counter_n, .. } => {
                Some(*counter_n as f64 / (*support_n + *counter_n) as f64)
            }
            _ => None,
        }
    }
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionLabel::Balanced { k_per_side } => write!(f, "balanced(k={k_per_side})"),
            ConditionLabel::Volume { preferred, support_n, counter_n } => {
                write!(f, "volume({preferred},{support_n}|{counter_n})")
            }
            ConditionLabel::Intensity { preferred, k_per_side, base_pct, delta_pct } => write!(
                f,
                "intensity({preferred},{}+{},k={k_per_side})",
                format_intensity(*base_pct),
                format_delta(*delta_pct)
            ),
            ConditionLabel::Style { momentum_side } => write!(f, "style(momentum={momentum_side})"),
        }
    }
}

fn format_delta(delta: f64) -> String {
    if delta == 0.0 {
        "0".into()
    } else {
        format_intensity(delta)
    }
}

/// One trial's experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: ConditionLabel,
    pub ticker: String,
    pub trial_index: u32,
    pub shuffle_seed: u64,
}

/// In-place seeded Fisher-Yates shuffle.
pub fn fisher_yates<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn shuffled(mut items: Vec<Evidence>, shuffle_seed: u64) -> Vec<Evidence> {
    fisher_yates(&mut items, &mut crate::seed::rng(shuffle_seed));
    items
}

/// `k` buy and `k` sell items at the baseline intensity, shuffled.
pub fn build_balanced(
    evidence: &EvidenceSet,
    ticker: &str,
    k_per_side: usize,
    base_pct: f64,
    shuffle_seed: u64,
) -> Result<PromptSpec, ProtocolError> {
    if k_per_side == 0 {
        return Err(ProtocolError::ZeroK);
    }
    let mut context = evidence.select(ticker, Direction::Buy, base_pct, k_per_side)?;
    context.extend(evidence.select(ticker, Direction::Sell, base_pct, k_per_side)?);
    Ok(PromptSpec::new(PromptStage::Elicitation, shuffled(context, shuffle_seed)))
}

/// `support_n` items for `preferred` and `counter_n` against it, at baseline intensity.
pub fn build_volume_imbalanced(
    evidence: &EvidenceSet,
    ticker: &str,
    preferred: Direction,
    support_n: usize,
    counter_n: usize,
    base_pct: f64,
    shuffle_seed: u64,
) -> Result<PromptSpec, ProtocolError> {
    if counter_n <= support_n {
        return Err(ProtocolError::VolumeContract { support_n, counter_n });
    }
    let mut context = if support_n > 0 { evidence.select(ticker, preferred, base_pct, support_n)? } else { Vec::new() };
    context.extend(evidence.select(ticker, preferred.opposite(), base_pct, counter_n)?);
    Ok(PromptSpec::new(PromptStage::Verification, shuffled(context, shuffle_seed)))
}

/// `k` supporting items at `base_pct` and `k` counter items at `base_pct + delta_pct`.
pub fn build_intensity_imbalanced(
    evidence: &EvidenceSet,
    ticker: &str,
    preferred: Direction,
    k_per_side: usize,
    base_pct: f64,
    delta_pct: f64,
    shuffle_seed: u64,
) -> Result<PromptSpec, ProtocolError> {
    if delta_pct.is_nan() || delta_pct < 0.0 {
        return Err(ProtocolError::NegativeDelta(delta_pct));
    }
    if k_per_side == 0 {
        return Err(ProtocolError::ZeroK);
    }
    let mut context = evidence.select(ticker, preferred, base_pct, k_per_side)?;
    context.extend(evidence.select(ticker, preferred.opposite(), base_pct + delta_pct, k_per_side)?);
    Ok(PromptSpec::new(PromptStage::Verification, shuffled(context, shuffle_seed)))
}

/// Two-item context from a (momentum, contrarian) pair.
pub fn build_style_conflict(pair: (Evidence, Evidence), shuffle_seed: u64) -> Result<PromptSpec, ProtocolError> {
    let (momentum, contrarian) = pair;
    if momentum.direction == contrarian.direction {
        return Err(ProtocolError::StylePairSides);
    }
    let buy_view = if momentum.direction == Direction::Buy { momentum.kind } else { contrarian.kind };
    let mut spec = PromptSpec::new(PromptStage::Elicitation, shuffled(vec![momentum, contrarian], shuffle_seed));
    spec.buy_view = Some(buy_view);
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

/// Renders a spec into a single user message.
pub fn render_messages(spec: &PromptSpec, ticker: &str, name: &str) -> Vec<ChatMessage> {
    let heading = match spec.stage {
        PromptStage::Elicitation => "Evidence - Preference Elicitation",
        PromptStage::Verification => "Evidence - Bias Verification",
    };
    let mut body = String::new();
    body.push_str(&format!("Goal. {}\n\n", spec.task));
    body.push_str(&format!("Stock Ticker: {ticker}\nStock Name: {name}\n\n"));
    body.push_str(heading);
    body.push('\n');
    for (i, e) in spec.context.iter().enumerate() {
        body.push_str(&format!("{}. {}\n", i + 1, e.text));
    }
    body.push('\n');
    body.push_str(OUTPUT_REQUIREMENTS);
    vec![ChatMessage::user(body)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseCategory {
    Malformed,
    ForbiddenAction,
    Schema,
}

impl fmt::Display for ParseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseCategory::Malformed => "malformed",
            ParseCategory::ForbiddenAction => "forbidden-action",
            ParseCategory::Schema => "schema",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{category}: {message}")]
pub struct DecisionParseError {
    pub category: ParseCategory,
    pub message: String,
}

fn parse_error(category: ParseCategory, message: impl Into<String>) -> DecisionParseError {
    DecisionParseError { category, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Direction,
    pub reason: String,
    pub raw: String,
}

fn strip_fence(text: &str) -> Option<&str> {
    let inner = text.strip_prefix("```")?.strip_suffix("```")?;
    let inner = inner.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    Some(inner.trim())
}

/// Accepts exactly one JSON object `{"decision": "buy"|"sell", "reason": "..."}`,
/// optionally wrapped in a code fence. Anything else is rejected.
pub fn parse_decision(raw: &str) -> Result<Decision, DecisionParseError> {
    let trimmed = raw.trim();
    let body = if trimmed.starts_with("```") {
        strip_fence(trimmed).ok_or_else(|| parse_error(ParseCategory::Malformed, "unterminated code fence"))?
    } else {
        trimmed
    };
    if !(body.starts_with('{') && body.ends_with('}')) {
        return Err(parse_error(
            ParseCategory::Malformed,
            "response must be a single JSON object with no surrounding text",
        ));
    }
    let value: Value =
        serde_json::from_str(body).map_err(|e| parse_error(ParseCategory::Malformed, format!("invalid JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(parse_error(ParseCategory::Malformed, "not a JSON object"));
    };

    if let Some(extra) = map.keys().find(|k| *k != "decision" && *k != "reason") {
        return Err(parse_error(ParseCategory::Schema, format!("unexpected field {extra:?}")));
    }
    let decision = match map.get("decision") {
        Some(Value::String(s)) => s.trim().to_ascii_lowercase(),
        Some(_) => return Err(parse_error(ParseCategory::Schema, "decision must be a string")),
        None => return Err(parse_error(ParseCategory::Schema, "missing decision")),
    };
    let action = match decision.as_str() {
        "buy" => Direction::Buy,
        "sell" => Direction::Sell,
        other => {
            return Err(parse_error(
                ParseCategory::ForbiddenAction,
                format!("decision {other:?} is not one of buy/sell"),
            ))
        }
    };
    let reason = match map.get("reason") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => return Err(parse_error(ParseCategory::Schema, "reason is empty")),
        Some(_) => return Err(parse_error(ParseCategory::Schema, "reason must be a string")),
        None => return Err(parse_error(ParseCategory::Schema, "missing reason")),
    };
    Ok(Decision { action, reason, raw: raw.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{build_template_corpus, CorpusPlan};
    use crate::universe::{Sector, Stock, Universe};

    fn corpus() -> EvidenceSet {
        let u = Universe::new(
            vec![Stock {
                ticker: "FANG".into(),
                name: "Diamondback Energy, Inc.".into(),
                sector: Sector::Energy,
                market_cap: 4e10,
            }],
            "mem",
        )
        .unwrap();
        build_template_corpus(&u, &CorpusPlan::standard(5.0, &[1.0, 3.0, 5.0, 10.0], 9)).unwrap()
    }

    fn count(spec: &PromptSpec, direction: Direction, pct: &str) -> usize {
        spec.composition().iter().filter(|(d, p)| *d == direction && p == pct).count()
    }

    #[test]
    fn balanced_holds_k_per_side() {
        let spec = build_balanced(&corpus(), "FANG", 2, 5.0, 1).unwrap();
        assert_eq!(spec.context.len(), 4);
        assert_eq!(count(&spec, Direction::Buy, "5"), 2);
        assert_eq!(count(&spec, Direction::Sell, "5"), 2);
        assert_eq!(spec.actions, [Direction::Buy, Direction::Sell]);
    }

    #[test]
    fn balanced_order_is_seeded() {
        let c = corpus();
        let a = build_balanced(&c, "FANG", 2, 5.0, 1).unwrap();
        assert_eq!(a, build_balanced(&c, "FANG", 2, 5.0, 1).unwrap());
        // 23/24 chance per seed pair to differ; over 10 seeds at least one must.
        let orders: Vec<_> = (1..=10).map(|s| build_balanced(&c, "FANG", 2, 5.0, s).unwrap().context).collect();
        assert!(orders.iter().any(|o| *o != orders[0]));
    }

    #[test]
    fn balanced_deficit() {
        let err = build_balanced(&corpus(), "FANG", 5, 5.0, 1).unwrap_err();
        assert!(matches!(err, ProtocolError::Insufficient(Deficit { needed: 5, available: 4, .. })));
        assert!(matches!(build_balanced(&corpus(), "NOPE", 1, 5.0, 1).unwrap_err(), ProtocolError::Insufficient(_)));
    }

    #[test]
    fn volume_two_support_three_counter() {
        let spec = build_volume_imbalanced(&corpus(), "FANG", Direction::Buy, 2, 3, 5.0, 4).unwrap();
        assert_eq!(count(&spec, Direction::Buy, "5"), 2);
        assert_eq!(count(&spec, Direction::Sell, "5"), 3);
        assert_eq!(spec.stage, PromptStage::Verification);
    }

    #[test]
    fn volume_counter_only_and_contract() {
        let spec = build_volume_imbalanced(&corpus(), "FANG", Direction::Sell, 0, 3, 5.0, 4).unwrap();
        assert_eq!(spec.context.len(), 3);
        assert!(spec.context.iter().all(|e| e.direction == Direction::Buy));
        assert!(matches!(
            build_volume_imbalanced(&corpus(), "FANG", Direction::Buy, 3, 2, 5.0, 4),
            Err(ProtocolError::VolumeContract { support_n: 3, counter_n: 2 })
        ));
    }

    #[test]
    fn intensity_counter_items_are_intensified() {
        let spec = build_intensity_imbalanced(&corpus(), "FANG", Direction::Buy, 2, 5.0, 5.0, 2).unwrap();
        assert_eq!(count(&spec, Direction::Buy, "5"), 2);
        assert_eq!(count(&spec, Direction::Sell, "10"), 2);
        for delta in [1.0, 3.0, 5.0, 10.0] {
            let spec = build_intensity_imbalanced(&corpus(), "FANG", Direction::Sell, 2, 5.0, delta, 2).unwrap();
            assert_eq!(count(&spec, Direction::Buy, &format_intensity(5.0 + delta)), 2);
        }
        assert!(matches!(
            build_intensity_imbalanced(&corpus(), "FANG", Direction::Buy, 2, 5.0, 2.0, 2),
            Err(ProtocolError::Insufficient(_))
        ));
        assert!(matches!(
            build_intensity_imbalanced(&corpus(), "FANG", Direction::Buy, 2, 5.0, -1.0, 2),
            Err(ProtocolError::NegativeDelta(_))
        ));
    }

    #[test]
    fn zero_delta_matches_balanced_composition() {
        let c = corpus();
        let intensity = build_intensity_imbalanced(&c, "FANG", Direction::Buy, 2, 5.0, 0.0, 3).unwrap();
        let balanced = build_balanced(&c, "FANG", 2, 5.0, 3).unwrap();
        assert_eq!(intensity.composition(), balanced.composition());
    }

    #[test]
    fn style_conflict_records_buy_view() {
        let stock =
            Stock { ticker: "AAPL".into(), name: "Apple Inc.".into(), sector: Sector::Technology, market_cap: 3e12 };
        let pair = crate::evidence::generate_style_pair(&stock, Direction::Sell, 5.0, 1).unwrap();
        let spec = build_style_conflict(pair.clone(), 8).unwrap();
        assert_eq!(spec.buy_view, Some(EvidenceKind::Contrarian));
        assert_eq!(spec.context.len(), 2);
        let same_side = (pair.0.clone(), Evidence { direction: Direction::Sell, ..pair.1 });
        assert!(matches!(build_style_conflict(same_side, 8), Err(ProtocolError::StylePairSides)));
    }

    #[test]
    fn rendering_contains_every_item_in_order() {
        let spec = build_balanced(&corpus(), "FANG", 2, 5.0, 1).unwrap();
        let messages = render_messages(&spec, "FANG", "Diamondback Energy, Inc.");
        assert_eq!(messages.len(), 1);
        let text = &messages[0].content;
        let mut cursor = 0;
        for (i, e) in spec.context.iter().enumerate() {
            let line = format!("{}. {}", i + 1, e.text);
            assert_eq!(text.matches(&e.text).count(), 1);
            let at = text[cursor..].find(&line).expect("numbered line present in order");
            cursor += at + line.len();
        }
        assert!(text.contains(OUTPUT_REQUIREMENTS));
        assert!(text.contains("Do not include \"hold\" as an option"));
        assert!(text.contains("must start with {"));
        assert_eq!(text.to_lowercase().matches("hold").count(), 1);
    }

    #[test]
    fn condition_keys_are_stable() {
        let labels = [
            (ConditionLabel::Balanced { k_per_side: 2 }, "balanced(k=2)"),
            (ConditionLabel::Volume { preferred: Direction::Buy, support_n: 2, counter_n: 3 }, "volume(buy,2|3)"),
            (
                ConditionLabel::Intensity { preferred: Direction::Sell, k_per_side: 2, base_pct: 5.0, delta_pct: 10.0 },
                "intensity(sell,5+10,k=2)",
            ),
            (ConditionLabel::Style { momentum_side: Direction::Buy }, "style(momentum=buy)"),
        ];
        for (label, key) in labels {
            assert_eq!(label.to_string(), key);
        }
    }

    #[test]
    fn parses_plain_decision() {
        let d = parse_decision(r#"{"decision":"buy","reason":"net positive"}"#).unwrap();
        assert_eq!(d.action, Direction::Buy);
        assert_eq!(d.reason, "net positive");
    }

    #[test]
    fn hold_is_forbidden() {
        let err = parse_decision(r#"{"decision":"hold","reason":"unsure"}"#).unwrap_err();
        assert_eq!(err.category, ParseCategory::ForbiddenAction);
    }

    #[test]
    fn fenced_json_is_tolerated() {
        let d = parse_decision("```json {\"decision\":\"sell\",\"reason\":\"x\"} ```").unwrap();
        assert_eq!(d.action, Direction::Sell);
        let d = parse_decision("  ```\n{\"decision\": \" SELL \", \"reason\": \"x\"}\n```\n").unwrap();
        assert_eq!(d.action, Direction::Sell);
    }

    #[test]
    fn rejects_everything_else() {
        let cases = [
            ("I think buy.", ParseCategory::Malformed),
            ("Sure! {\"decision\":\"buy\",\"reason\":\"x\"}", ParseCategory::Malformed),
            ("{\"decision\":\"buy\",\"reason\":\"x\"} Hope this helps.", ParseCategory::Malformed),
            ("{\"decision\":\"buy\"", ParseCategory::Malformed),
            ("{\"decision\":\"buy\"}", ParseCategory::Schema),
            ("{\"decision\":\"buy\",\"reason\":\"  \"}", ParseCategory::Schema),
            ("{\"decision\":\"buy\",\"reason\":\"x\",\"confidence\":0.9}", ParseCategory::Schema),
            ("{\"decision\":1,\"reason\":\"x\"}", ParseCategory::Schema),
            ("{\"decision\":\"strong buy\",\"reason\":\"x\"}", ParseCategory::ForbiddenAction),
            ("```json {\"decision\":\"buy\",\"reason\":\"x\"}", ParseCategory::Malformed),
        ];
        for (raw, category) in cases {
            assert_eq!(parse_decision(raw).unwrap_err().category, category, "{raw}");
        }
    }
}
