//! Evidence generation through a chat endpoint.

use super::{format_intensity, validate_evidence, Evidence, EvidenceError, EvidenceKind, Origin};
use crate::action::Direction;
use crate::gateway::{Gateway, Prompt};
use crate::protocol::ChatMessage;
use crate::seed;
use crate::universe::Stock;

/// Attempts per generation request before giving up.
pub const GENERATION_ATTEMPTS: usize = 3;

fn title(kind: EvidenceKind) -> &'static str {
    match kind {
        EvidenceKind::Qualitative => "Qualitative",
        EvidenceKind::Quantitative => "Quantitative",
        EvidenceKind::Momentum => "Momentum",
        EvidenceKind::Contrarian => "Contrarian",
    }
}

fn plural(count: usize) -> &'static str {
    if count == 1 {
        "evidence"
    } else {
        "evidences"
    }
}

fn format_lines(count: usize) -> String {
    (1..=count).map(|i| format!("{i}. ...")).collect::<Vec<_>>().join("\n")
}

/// Generation prompt for qualitative or quantitative evidence.
pub fn render_generation_prompt(
    stock: &Stock,
    direction: Direction,
    kind: EvidenceKind,
    intensity_pct: f64,
    count: usize,
) -> Result<String, EvidenceError> {
    let pct = format_intensity(intensity_pct);
    let lower = kind.as_str();
    let header = format!(
        "Stock Ticker: {}\nStock Name: {}\nRecommendation: {}\n\n\
         Your task is to create a hypothetical investment case. \
         Generate {count} synthetic {lower} {} to support the recommendation.\n\n\
         Format your response strictly as:\n\nSynthetic {} Evidence:\n{}\n\nInstructions:\n",
        stock.ticker,
        stock.name,
        direction.as_str(),
        plural(count),
        title(kind),
        format_lines(count),
    );
    let instructions = match kind {
        EvidenceKind::Qualitative => vec![
            "Create purely fictional evidences by inventing plausible company events that are not based on real-world public information.".to_string(),
            format!("Each evidence must explicitly state a potential impact of exactly {pct}% on the stock price."),
            format!("For BUY recommendations: each evidence must state factors that could lead to a {pct}% price increase."),
            format!("For SELL recommendations: each evidence must state factors that could lead to a {pct}% price decrease."),
        ],
        EvidenceKind::Quantitative => vec![
            "Use specific numerical data, metrics, and financial figures.".to_string(),
            "Include concrete numbers, percentages, ratios, or other quantifiable metrics.".to_string(),
            format!("Important: Each evidence must use financial metrics to explicitly state a potential impact of exactly {pct}% on the stock price."),
            "Examples: Revenue/earnings growth, profit margin changes, P/E ratio comparisons, market share percentages, cash flow metrics, debt-to-equity ratios, ROE, etc.".to_string(),
        ],
        EvidenceKind::Momentum | EvidenceKind::Contrarian => return Err(EvidenceError::PairOnlyKind { kind }),
    };
    let numbered: Vec<String> = instructions.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect();
    Ok(header + &numbered.join("\n"))
}

/// Generation prompt for a momentum/contrarian pair.
pub fn render_style_generation_prompt(stock: &Stock, momentum_side: Direction, intensity_pct: f64) -> String {
    let pct = format_intensity(intensity_pct);
    let upper = |d: Direction| d.as_str().to_uppercase();
    format!(
        "Stock Ticker: {ticker}\nStock Name: {name}\n\n\
         Create a pair of conflicting, but balanced evidences for {name} using the two perspectives below.\n\n\
         Perspectives\n\
         A  Momentum    Target: {a}\n   Follows recent price/flow signals.\n\
         B  Contrarian  Target: {b}\n   Opposes trend; emphasizes mean-reversion/value.\n\n\
         Crucial Constraint: Both evidences must assume the same expected price change of {pct}%.\n\n\
         Format strictly as:\n\
         1. [Momentum] Claim -- Expected change: {pct}% -- Reason: one concise rationale.\n\
         2. [Contrarian] Claim -- Expected change: {pct}% -- Reason: one concise rationale.\n\n\
         Instructions: Keep each evidence concise (1-2 sentences), create purely fictional but plausible evidence, \
         and explicitly state the expected price change of {pct}% with reasoning for each point.",
        ticker = stock.ticker,
        name = stock.name,
        a = upper(momentum_side),
        b = upper(momentum_side.opposite()),
    )
}

/// Items of a numbered list (`1. text` or `1) text`). Lines before the first
/// item are ignored; unnumbered lines continue the current item.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim().trim_start_matches(['*', '#']).trim();
        let digits = trimmed.chars().take_while(char::is_ascii_digit).count();
        let rest = &trimmed[digits..];
        if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) {
            items.push(rest[1..].trim().to_string());
        } else if let Some(last) = items.last_mut() {
            if !trimmed.is_empty() {
                last.push(' ');
                last.push_str(trimmed);
            }
        }
    }
    items.retain(|s| !s.is_empty());
    items
}

fn strip_tag(item: &str, tag: &str) -> String {
    let open = format!("[{tag}]");
    let lower = item.to_lowercase();
    if lower.starts_with(&open.to_lowercase()) {
        item[open.len()..].trim().to_string()
    } else {
        item.trim().to_string()
    }
}

fn generation_prompt(stock: &Stock, content: String) -> Prompt {
    Prompt { ticker: stock.ticker.clone(), messages: vec![ChatMessage::user(content)], spec: None }
}

/// Asks the generator until a response parses into exactly `expected`
/// valid items, or the attempt budget runs out.
async fn generate_checked(
    stock: &Stock,
    prompt: Prompt,
    gateway: &Gateway,
    seed: u64,
    build: impl Fn(usize, &str) -> Evidence,
    expected: usize,
) -> Result<Vec<Evidence>, EvidenceError> {
    let mut reason = String::new();
    let mut raw = String::new();
    for attempt in 0..GENERATION_ATTEMPTS {
        let trial_seed = seed::stable_hash([seed.to_string(), attempt.to_string()]);
        let reply = gateway.complete(&prompt, trial_seed).await?;
        raw = reply.raw_text;
        let items = parse_numbered_list(&raw);
        if items.len() != expected {
            reason = format!("expected {expected} items, got {}", items.len());
            tracing::warn!(ticker = %stock.ticker, attempt, %reason, "generation rejected");
            continue;
        }
        let built: Vec<Evidence> = items.iter().enumerate().map(|(i, s)| build(i, s)).collect();
        let problems: Vec<String> = built
            .iter()
            .enumerate()
            .filter_map(|(i, e)| validate_evidence(e).err().map(|v| format!("item {}: {v:?}", i + 1)))
            .collect();
        if problems.is_empty() {
            return Ok(built);
        }
        reason = problems.join("; ");
        tracing::warn!(ticker = %stock.ticker, attempt, %reason, "generation rejected");
    }
    Err(EvidenceError::Generation { attempts: GENERATION_ATTEMPTS, reason, raw })
}

/// Qualitative or quantitative evidence from a generator model.
pub async fn generate_llm_evidence(
    stock: &Stock,
    direction: Direction,
    kind: EvidenceKind,
    intensity_pct: f64,
    count: usize,
    generator: &Gateway,
    seed: u64,
) -> Result<Vec<Evidence>, EvidenceError> {
    if !(intensity_pct.is_finite() && intensity_pct > 0.0) {
        return Err(EvidenceError::BadIntensity(intensity_pct));
    }
    if count == 0 {
        return Err(EvidenceError::ZeroCount);
    }
    let content = render_generation_prompt(stock, direction, kind, intensity_pct, count)?;
    let build = |_: usize, text: &str| Evidence {
        ticker: stock.ticker.clone(),
        direction,
        kind,
        intensity_pct,
        text: text.to_string(),
        origin: Origin::Llm,
    };
    generate_checked(stock, generation_prompt(stock, content), generator, seed, build, count).await
}

/// A (momentum, contrarian) pair from a generator model.
pub async fn generate_llm_style_pair(
    stock: &Stock,
    momentum_side: Direction,
    intensity_pct: f64,
    generator: &Gateway,
    seed: u64,
) -> Result<(Evidence, Evidence), EvidenceError> {
    if !(intensity_pct.is_finite() && intensity_pct > 0.0) {
        return Err(EvidenceError::BadIntensity(intensity_pct));
    }
    let content = render_style_generation_prompt(stock, momentum_side, intensity_pct);
    let build = |i: usize, text: &str| {
        let (kind, direction) = if i == 0 {
            (EvidenceKind::Momentum, momentum_side)
        } else {
            (EvidenceKind::Contrarian, momentum_side.opposite())
        };
        Evidence {
            ticker: stock.ticker.clone(),
            direction,
            kind,
            intensity_pct,
            text: strip_tag(text, title(kind)),
            origin: Origin::Llm,
        }
    };
    let mut pair = generate_checked(stock, generation_prompt(stock, content), generator, seed, build, 2).await?;
    let contrarian = pair.pop().expect("two items");
    let momentum = pair.pop().expect("two items");
    Ok((momentum, contrarian))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use async_trait::async_trait;

    use super::*;
    use crate::gateway::{Backend, GatewayError, ModelConfig, ModelReply};
    use crate::universe::Sector;

    struct Canned(String);

    #[async_trait]
    impl Backend for Canned {
        async fn complete(&self, _: &Prompt, _: u64) -> Result<ModelReply, GatewayError> {
            Ok(ModelReply { raw_text: self.0.clone(), action_probs: None, latency: Default::default() })
        }
    }

    fn gateway(text: &str) -> Gateway {
        Gateway::with_backend(ModelConfig::remote("gen", "http://unused"), Arc::new(Canned(text.into())))
    }

    fn msft() -> Stock {
        Stock {
            ticker: "MSFT".into(),
            name: "Microsoft Corporation".into(),
            sector: Sector::Technology,
            market_cap: 3.0e12,
        }
    }

    const TWO_ITEMS: &str = "Synthetic Qualitative Evidence:\n\
        1. A new enterprise service could drive a 5% increase in the stock price.\n\
        2. A hardware partnership supports a potential 5% rise in the\n   stock's value over six months.\n";

    #[tokio::test]
    async fn compliant_list_parses() {
        let g = gateway(TWO_ITEMS);
        let items =
            generate_llm_evidence(&msft(), Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, &g, 1).await.unwrap();
        assert_eq!(items.len(), 2);
        assert!(items[1].text.ends_with("stock's value over six months."));
        assert!(items.iter().all(|e| e.origin == Origin::Llm));
        assert_eq!(g.invocations(), 1);
    }

    #[tokio::test]
    async fn missing_figure_fails_after_retries() {
        let g = gateway("1. Demand could lift the shares.\n2. Margins may expand notably.");
        let err =
            generate_llm_evidence(&msft(), Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, &g, 1).await.unwrap_err();
        match err {
            EvidenceError::Generation { attempts, raw, .. } => {
                assert_eq!(attempts, GENERATION_ATTEMPTS);
                assert!(raw.contains("Demand could lift"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.invocations(), GENERATION_ATTEMPTS as u64);
    }

    #[tokio::test]
    async fn count_mismatch_fails() {
        let three = format!("{TWO_ITEMS}3. Buybacks might add a 5% gain to the stock.");
        let g = gateway(&three);
        let err =
            generate_llm_evidence(&msft(), Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, &g, 1).await.unwrap_err();
        assert!(
            matches!(err, EvidenceError::Generation { ref reason, .. } if reason.contains("expected 2 items, got 3"))
        );
    }

    #[tokio::test]
    async fn style_pair_from_generator() {
        let g = gateway(
            "1. [Momentum] Shares broke below the 50-day average and may fall a further 5% -- Expected change: 5% -- Reason: trend funds are selling.\n\
             2. [Contrarian] The selloff looks overdone and a 5% rebound is likely -- Expected change: 5% -- Reason: valuation support.",
        );
        let (m, c) = generate_llm_style_pair(&msft(), Direction::Sell, 5.0, &g, 3).await.unwrap();
        assert_eq!((m.kind, m.direction), (EvidenceKind::Momentum, Direction::Sell));
        assert_eq!((c.kind, c.direction), (EvidenceKind::Contrarian, Direction::Buy));
        assert!(m.text.starts_with("Shares broke"));
    }

    #[test]
    fn prompts_fill_placeholders() {
        let p = render_generation_prompt(&msft(), Direction::Sell, EvidenceKind::Quantitative, 10.0, 2).unwrap();
        assert!(p.contains("Stock Ticker: MSFT"));
        assert!(p.contains("Recommendation: sell"));
        assert!(p.contains("Generate 2 synthetic quantitative evidences"));
        assert!(p.contains("exactly 10%"));
        assert!(!p.contains('['));
        let s = render_style_generation_prompt(&msft(), Direction::Sell, 5.0);
        assert!(s.contains("Momentum    Target: SELL"));
        assert!(s.contains("Contrarian  Target: BUY"));
        assert!(matches!(
            render_generation_prompt(&msft(), Direction::Buy, EvidenceKind::Momentum, 5.0, 1),
            Err(EvidenceError::PairOnlyKind { .. })
        ));
    }

    #[test]
    fn numbered_list_variants() {
        assert_eq!(parse_numbered_list("Header:\n1) a\n2. b\n   c\n\n10. d"), vec!["a", "b c", "d"]);
        assert!(parse_numbered_list("no list here").is_empty());
    }
}
