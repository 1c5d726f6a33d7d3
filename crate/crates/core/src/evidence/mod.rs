//! Synthetic buy/sell evidence: templated generation, validation and the
//! JSON-lines evidence store.

mod llm;
mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action::Direction;
use crate::seed;
use crate::universe::{Stock, Universe};

pub use llm::{
    generate_llm_evidence, generate_llm_style_pair, parse_numbered_list, render_generation_prompt,
    render_style_generation_prompt, GENERATION_ATTEMPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceKind {
    Qualitative,
    Quantitative,
    Momentum,
    Contrarian,
}

impl EvidenceKind {
    pub const ALL: [EvidenceKind; 4] =
        [EvidenceKind::Qualitative, EvidenceKind::Quantitative, EvidenceKind::Momentum, EvidenceKind::Contrarian];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceKind::Qualitative => "qualitative",
            EvidenceKind::Quantitative => "quantitative",
            EvidenceKind::Momentum => "momentum",
            EvidenceKind::Contrarian => "contrarian",
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Template,
    Llm,
}

/// One synthetic argument stating an expected price change of `intensity_pct`
/// in the direction of `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub ticker: String,
    pub direction: Direction,
    pub kind: EvidenceKind,
    pub intensity_pct: f64,
    pub text: String,
    pub origin: Origin,
}

#[derive(Debug, thiserror::Error)]
pub enum EvidenceError {
    #[error("intensity must be a positive number, got {0}")]
    BadIntensity(f64),
    #[error("count must be positive")]
    ZeroCount,
    #[error("requested {requested} texts but the template bank holds {capacity} per (direction, kind)")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("evidence for {ticker} failed validation: {violations:?}")]
    Invalid { ticker: String, violations: Vec<Violation> },
    #[error("{kind} evidence is generated in pairs; use the style-pair generator")]
    PairOnlyKind { kind: EvidenceKind },
    #[error("generation failed after {attempts} attempts: {reason}\n--- last response ---\n{raw}")]
    Generation { attempts: usize, reason: String, raw: String },
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("evidence store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("evidence store {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// A broken evidence invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyTicker,
    EmptyText,
    NonPositiveIntensity,
    /// The text never states the exact intensity figure.
    IntensityMismatch {
        expected: String,
    },
    /// The intensity figure carries no increase/decrease wording nearby.
    MissingFraming,
    /// The wording next to the intensity figure points the other way.
    FramingMismatch {
        direction: Direction,
        word: String,
    },
}

/// Renders an intensity as a whole number when integral, else with one decimal.
pub fn format_intensity(intensity_pct: f64) -> String {
    if intensity_pct.fract() == 0.0 {
        format!("{intensity_pct:.0}")
    } else {
        format!("{intensity_pct:.1}")
    }
}

const UP_WORDS: &[&str] = &[
    "increase",
    "increases",
    "increased",
    "rise",
    "rises",
    "rising",
    "rally",
    "gain",
    "gains",
    "upside",
    "appreciation",
    "appreciate",
    "higher",
    "above",
    "climb",
    "climbs",
    "up",
    "uplift",
    "lift",
    "boost",
    "advance",
    "rebound",
    "jump",
];

const DOWN_WORDS: &[&str] = &[
    "decrease",
    "decreases",
    "decreased",
    "decline",
    "declines",
    "drop",
    "drops",
    "fall",
    "falls",
    "downside",
    "depreciation",
    "lower",
    "below",
    "reduction",
    "down",
    "slide",
    "pullback",
    "contraction",
    "cut",
    "cuts",
    "erosion",
    "correction",
    "retreat",
];

fn framing_of(word: &str) -> Option<Direction> {
    let cleaned: String = word.trim_matches(|c: char| !c.is_alphabetic()).to_lowercase();
    if UP_WORDS.contains(&cleaned.as_str()) {
        Some(Direction::Buy)
    } else if DOWN_WORDS.contains(&cleaned.as_str()) {
        Some(Direction::Sell)
    } else {
        None
    }
}

/// Whether a whitespace-delimited word states `figure` (e.g. "5%") as a whole
/// number: "5%," matches, "15%" and "2.5%" do not.
fn states_figure(word: &str, figure: &str) -> bool {
    let body = word.trim_start_matches(|c: char| !c.is_ascii_digit());
    let Some(rest) = body.strip_prefix(figure) else {
        return false;
    };
    // ".5%" is a fraction, not the figure
    let prefix_len = word.len() - body.len();
    let prev = word[..prefix_len].chars().last();
    !matches!(prev, Some('.') | Some(',')) && !rest.starts_with(|c: char| c.is_ascii_digit())
}

fn sentences(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if word.ends_with(['.', '!', '?', ';']) {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Checks the evidence invariants and returns every violation found.
pub fn validate_evidence(e: &Evidence) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if e.ticker.trim().is_empty() {
        violations.push(Violation::EmptyTicker);
    }
    if e.text.trim().is_empty() {
        violations.push(Violation::EmptyText);
    }
    if !(e.intensity_pct.is_finite() && e.intensity_pct > 0.0) {
        violations.push(Violation::NonPositiveIntensity);
    }
    if !violations.is_empty() {
        return Err(violations);
    }

    let figure = format!("{}%", format_intensity(e.intensity_pct));
    let mut mentioned = false;
    let mut framed = false;
    let mut mismatch = None;
    for sentence in sentences(&e.text) {
        for (pos, word) in sentence.iter().enumerate() {
            if !states_figure(word, &figure) {
                continue;
            }
            mentioned = true;
            // nearest framing word(s) in the same sentence
            let mut nearest: Option<(usize, Vec<(Direction, &str)>)> = None;
            for (other, candidate) in sentence.iter().enumerate() {
                let Some(dir) = framing_of(candidate) else { continue };
                let dist = pos.abs_diff(other);
                match &mut nearest {
                    Some((best, hits)) if dist == *best => hits.push((dir, candidate)),
                    Some((best, _)) if dist > *best => {}
                    _ => nearest = Some((dist, vec![(dir, candidate)])),
                }
            }
            let Some((_, hits)) = nearest else { continue };
            framed = true;
            if !hits.iter().any(|(dir, _)| *dir == e.direction) {
                let word = hits[0].1.trim_matches(|c: char| !c.is_alphabetic()).to_lowercase();
                mismatch.get_or_insert(Violation::FramingMismatch { direction: e.direction, word });
            }
        }
    }
    if !mentioned {
        violations.push(Violation::IntensityMismatch { expected: figure });
    } else if let Some(v) = mismatch {
        violations.push(v);
    } else if !framed {
        violations.push(Violation::MissingFraming);
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Number of distinct skeletons per (direction, kind).
pub fn template_capacity(direction: Direction, kind: EvidenceKind) -> usize {
    templates::skeletons(direction, kind).len()
}

/// Draws `count` distinct texts from the template bank. Same seed, same output.
pub fn generate_template_evidence(
    stock: &Stock,
    direction: Direction,
    kind: EvidenceKind,
    intensity_pct: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Evidence>, EvidenceError> {
    if !(intensity_pct.is_finite() && intensity_pct > 0.0) {
        return Err(EvidenceError::BadIntensity(intensity_pct));
    }
    if count == 0 {
        return Err(EvidenceError::ZeroCount);
    }
    let bank = templates::skeletons(direction, kind);
    if count > bank.len() {
        return Err(EvidenceError::CapacityExceeded { requested: count, capacity: bank.len() });
    }

    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..bank.len()).collect();
    crate::protocol::fisher_yates(&mut order, &mut rng);
    let pct = format_intensity(intensity_pct);

    order[..count]
        .iter()
        .map(|&i| {
            let evidence = Evidence {
                ticker: stock.ticker.clone(),
                direction,
                kind,
                intensity_pct,
                text: templates::fill(bank[i], &stock.ticker, &stock.name, &pct, &mut rng),
                origin: Origin::Template,
            };
            validate_evidence(&evidence)
                .map_err(|violations| EvidenceError::Invalid { ticker: stock.ticker.clone(), violations })?;
            Ok(evidence)
        })
        .collect()
}

/// A momentum item on `momentum_side` and a contrarian item on the opposite
/// side, both at the same intensity.
pub fn generate_style_pair(
    stock: &Stock,
    momentum_side: Direction,
    intensity_pct: f64,
    seed: u64,
) -> Result<(Evidence, Evidence), EvidenceError> {
    let momentum_seed = seed::stable_hash([seed.to_string().as_str(), "momentum"]);
    let contrarian_seed = seed::stable_hash([seed.to_string().as_str(), "contrarian"]);
    let momentum =
        generate_template_evidence(stock, momentum_side, EvidenceKind::Momentum, intensity_pct, 1, momentum_seed)?;
    let contrarian = generate_template_evidence(
        stock,
        momentum_side.opposite(),
        EvidenceKind::Contrarian,
        intensity_pct,
        1,
        contrarian_seed,
    )?;
    Ok((momentum.into_iter().next().expect("one item"), contrarian.into_iter().next().expect("one item")))
}

fn same_intensity(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Validated evidence corpus, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceSet {
    items: Vec<Evidence>,
}

/// Not enough stored evidence of one (ticker, direction, intensity) to fill a prompt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{ticker}: need {needed} {direction} evidence at {intensity_pct}% but the store has {available} (deficit {})", needed - available)]
pub struct Deficit {
    pub ticker: String,
    pub direction: Direction,
    pub intensity_pct: f64,
    pub needed: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub ticker: String,
    pub kind: EvidenceKind,
    pub intensity_pct: f64,
    pub buy: usize,
    pub sell: usize,
}

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an item after validating it.
    pub fn insert(&mut self, evidence: Evidence) -> Result<(), EvidenceError> {
        validate_evidence(&evidence)
            .map_err(|violations| EvidenceError::Invalid { ticker: evidence.ticker.clone(), violations })?;
        self.items.push(evidence);
        Ok(())
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Evidence>) -> Result<(), EvidenceError> {
        for item in items {
            self.insert(item)?;
        }
        Ok(())
    }

    pub fn items(&self) -> &[Evidence] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn for_ticker<'a>(&'a self, ticker: &'a str) -> impl Iterator<Item = &'a Evidence> + 'a {
        self.items.iter().filter(move |e| e.ticker == ticker)
    }

    /// Picks `k` qualitative/quantitative items of one side and intensity,
    /// alternating kinds in store order so mixed corpora yield mixed contexts.
    pub fn select(
        &self,
        ticker: &str,
        direction: Direction,
        intensity_pct: f64,
        k: usize,
    ) -> Result<Vec<Evidence>, Deficit> {
        let mut by_kind: BTreeMap<EvidenceKind, Vec<&Evidence>> = BTreeMap::new();
        for e in self.for_ticker(ticker) {
            if e.direction == direction
                && same_intensity(e.intensity_pct, intensity_pct)
                && matches!(e.kind, EvidenceKind::Qualitative | EvidenceKind::Quantitative)
            {
                by_kind.entry(e.kind).or_default().push(e);
            }
        }
        let available: usize = by_kind.values().map(Vec::len).sum();
        if available < k {
            return Err(Deficit { ticker: ticker.to_string(), direction, intensity_pct, needed: k, available });
        }
        let mut picked = Vec::with_capacity(k);
        let mut round = 0;
        while picked.len() < k {
            for items in by_kind.values() {
                if picked.len() < k {
                    if let Some(e) = items.get(round) {
                        picked.push((*e).clone());
                    }
                }
            }
            round += 1;
        }
        Ok(picked)
    }

    /// Buy/sell counts per (ticker, kind, intensity), sorted.
    pub fn balance(&self) -> Vec<BalanceRow> {
        let mut counts: BTreeMap<(String, EvidenceKind, String), (f64, usize, usize)> = BTreeMap::new();
        for e in &self.items {
            let key = (e.ticker.clone(), e.kind, format_intensity(e.intensity_pct));
            let entry = counts.entry(key).or_insert((e.intensity_pct, 0, 0));
            match e.direction {
                Direction::Buy => entry.1 += 1,
                Direction::Sell => entry.2 += 1,
            }
        }
        counts
            .into_iter()
            .map(|((ticker, kind, _), (intensity_pct, buy, sell))| BalanceRow {
                ticker,
                kind,
                intensity_pct,
                buy,
                sell,
            })
            .collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.balance().iter().all(|row| row.buy == row.sell)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.items {
            out.push_str(&serde_json::to_string(e).expect("evidence serializes"));
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> String {
        seed::digest_hex(self.to_jsonl().as_bytes())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), EvidenceError> {
        let path = path.as_ref();
        let io = |source| EvidenceError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        file.flush().map_err(io)
    }

    /// Loads a store, re-validating every line.
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, EvidenceError> {
        let path = path.as_ref();
        let io = |source| EvidenceError::Io { path: path.to_path_buf(), source };
        let file = std::fs::File::open(path).map_err(io)?;
        let mut set = EvidenceSet::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let evidence: Evidence = serde_json::from_str(&line).map_err(|source| EvidenceError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
            set.insert(evidence)?;
        }
        Ok(set)
    }
}

/// How many items to generate per side, per kind, at each intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub per_side: Vec<(EvidenceKind, usize)>,
    pub intensities: Vec<f64>,
    pub seed: u64,
}

impl CorpusPlan {
    /// Two qualitative and two quantitative items per side at the baseline
    /// and at every baseline + delta level.
    pub fn standard(base_intensity: f64, deltas: &[f64], seed: u64) -> Self {
        let mut intensities = vec![base_intensity];
        for d in deltas {
            let level = base_intensity + d;
            if !intensities.iter().any(|i| same_intensity(*i, level)) {
                intensities.push(level);
            }
        }
        Self { per_side: vec![(EvidenceKind::Qualitative, 2), (EvidenceKind::Quantitative, 2)], intensities, seed }
    }
}

/// Builds a balanced template corpus for every stock in the universe.
pub fn build_template_corpus(universe: &Universe, plan: &CorpusPlan) -> Result<EvidenceSet, EvidenceError> {
    let mut set = EvidenceSet::new();
    for stock in universe.stocks() {
        for &intensity in &plan.intensities {
            for &(kind, count) in &plan.per_side {
                for direction in Direction::BOTH {
                    let item_seed = seed::stable_hash([
                        "corpus".to_string(),
                        plan.seed.to_string(),
                        stock.ticker.clone(),
                        direction.to_string(),
                        kind.to_string(),
                        format_intensity(intensity),
                    ]);
                    set.extend(generate_template_evidence(stock, direction, kind, intensity, count, item_seed)?)?;
                }
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::Sector;

    fn stock(ticker: &str, name: &str) -> Stock {
        Stock { ticker: ticker.into(), name: name.into(), sector: Sector::Technology, market_cap: 1e12 }
    }

    fn evidence(direction: Direction, intensity: f64, text: &str) -> Evidence {
        Evidence {
            ticker: "MSFT".into(),
            direction,
            kind: EvidenceKind::Qualitative,
            intensity_pct: intensity,
            text: text.into(),
            origin: Origin::Template,
        }
    }

    #[test]
    fn intensity_rendering() {
        assert_eq!(format_intensity(5.0), "5");
        assert_eq!(format_intensity(10.0), "10");
        assert_eq!(format_intensity(7.5), "7.5");
    }

    #[test]
    fn qualitative_buy_texts_carry_figure_and_increase_framing() {
        let msft = stock("MSFT", "Microsoft Corporation");
        let items = generate_template_evidence(&msft, Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, 7).unwrap();
        assert_eq!(items.len(), 2);
        assert_ne!(items[0].text, items[1].text);
        for e in &items {
            assert!(e.text.contains("5%"), "{}", e.text);
            assert!(validate_evidence(e).is_ok());
            assert_eq!(e.origin, Origin::Template);
        }
    }

    #[test]
    fn quantitative_sell_text_frames_decrease() {
        let ebay = stock("EBAY", "eBay Inc.");
        let items = generate_template_evidence(&ebay, Direction::Sell, EvidenceKind::Quantitative, 10.0, 1, 1).unwrap();
        assert!(items[0].text.contains("10%"));
        assert!(validate_evidence(&items[0]).is_ok());
    }

    #[test]
    fn same_seed_same_texts() {
        let msft = stock("MSFT", "Microsoft Corporation");
        let a = generate_template_evidence(&msft, Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, 7).unwrap();
        let b = generate_template_evidence(&msft, Direction::Buy, EvidenceKind::Qualitative, 5.0, 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn over_capacity_reports_capacity() {
        let msft = stock("MSFT", "Microsoft Corporation");
        let err = generate_template_evidence(&msft, Direction::Buy, EvidenceKind::Qualitative, 5.0, 9, 7).unwrap_err();
        match err {
            EvidenceError::CapacityExceeded { requested, capacity } => {
                assert_eq!((requested, capacity), (9, 8));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            generate_template_evidence(&msft, Direction::Buy, EvidenceKind::Qualitative, 0.0, 1, 7),
            Err(EvidenceError::BadIntensity(_))
        ));
    }

    #[test]
    fn every_skeleton_validates_at_several_intensities() {
        let s = stock("ACME", "Acme Industries Corp.");
        for kind in EvidenceKind::ALL {
            for direction in Direction::BOTH {
                let capacity = template_capacity(direction, kind);
                assert!(capacity >= 8);
                for intensity in [1.0, 5.0, 6.0, 7.5, 10.0, 15.0] {
                    for seed in 0..4 {
                        let items = generate_template_evidence(&s, direction, kind, intensity, capacity, seed).unwrap();
                        let mut texts: Vec<_> = items.iter().map(|e| e.text.as_str()).collect();
                        texts.sort();
                        texts.dedup();
                        assert_eq!(texts.len(), capacity);
                        for e in &items {
                            assert!(!e.text.to_lowercase().contains("hold"), "{}", e.text);
                            assert_eq!(e.text.contains("contrarian"), kind == EvidenceKind::Contrarian, "{}", e.text);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn valid_buy_with_increase() {
        let e = evidence(Direction::Buy, 5.0, "A new contract could lead to a 5% increase in the stock price.");
        assert_eq!(validate_evidence(&e), Ok(()));
    }

    #[test]
    fn buy_saying_decrease_is_a_framing_mismatch() {
        let e = evidence(Direction::Buy, 5.0, "A lost contract could lead to a 5% decrease in the stock price.");
        let violations = validate_evidence(&e).unwrap_err();
        assert_eq!(violations, vec![Violation::FramingMismatch { direction: Direction::Buy, word: "decrease".into() }]);
    }

    #[test]
    fn wrong_figure_is_an_intensity_mismatch() {
        let e = evidence(Direction::Buy, 5.0, "A new contract could lead to a 7% increase in the stock price.");
        assert_eq!(validate_evidence(&e).unwrap_err(), vec![Violation::IntensityMismatch { expected: "5%".into() }]);
        // "15%" and "2.5%" do not state 5%
        let e = evidence(Direction::Buy, 5.0, "Margins rose 15% and 2.5% respectively, a 15% increase.");
        assert!(matches!(validate_evidence(&e).unwrap_err()[0], Violation::IntensityMismatch { .. }));
    }

    #[test]
    fn reports_all_violations() {
        let e = Evidence {
            ticker: " ".into(),
            direction: Direction::Buy,
            kind: EvidenceKind::Qualitative,
            intensity_pct: -1.0,
            text: "".into(),
            origin: Origin::Llm,
        };
        assert_eq!(
            validate_evidence(&e).unwrap_err(),
            vec![Violation::EmptyTicker, Violation::EmptyText, Violation::NonPositiveIntensity]
        );
    }

    #[test]
    fn missing_framing_is_reported() {
        let e = evidence(Direction::Sell, 5.0, "The target implies 5% for the stock.");
        assert_eq!(validate_evidence(&e).unwrap_err(), vec![Violation::MissingFraming]);
    }

    #[test]
    fn worked_examples_validate() {
        let hal_support = evidence(
            Direction::Buy,
            5.0,
            "Modeled in a DCF with 2.5% terminal growth, intrinsic value is 5% above the current price.",
        );
        assert_eq!(validate_evidence(&hal_support), Ok(()));
        let hal_counter = evidence(
            Direction::Sell,
            5.0,
            "FCF / debt service fell 2.5x to 2.1x over two quarters; revised DCF target is 5% lower than prior estimate.",
        );
        assert_eq!(validate_evidence(&hal_counter), Ok(()));
    }

    #[test]
    fn style_pair_occupies_opposite_sides() {
        let aapl = stock("AAPL", "Apple Inc.");
        for side in Direction::BOTH {
            let (momentum, contrarian) = generate_style_pair(&aapl, side, 5.0, 11).unwrap();
            assert_eq!(momentum.kind, EvidenceKind::Momentum);
            assert_eq!(contrarian.kind, EvidenceKind::Contrarian);
            assert_eq!(momentum.direction, side);
            assert_eq!(contrarian.direction, side.opposite());
            assert!(momentum.text.contains("5%") && contrarian.text.contains("5%"));
            assert_eq!(generate_style_pair(&aapl, side, 5.0, 11).unwrap(), (momentum, contrarian));
        }
    }

    #[test]
    fn store_rejects_invalid_items_and_round_trips() {
        let mut set = EvidenceSet::new();
        let bad = evidence(Direction::Buy, 5.0, "no figure here");
        assert!(matches!(set.insert(bad), Err(EvidenceError::Invalid { .. })));

        let u =
            Universe::new(vec![stock("AAPL", "Apple Inc."), stock("MSFT", "Microsoft Corporation")], "mem").unwrap();
        let corpus = build_template_corpus(&u, &CorpusPlan::standard(5.0, &[1.0, 3.0, 5.0, 10.0], 3)).unwrap();
        // 2 stocks x 5 intensities x 2 kinds x 2 sides x 2 items
        assert_eq!(corpus.len(), 80);
        assert!(corpus.is_balanced());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evidence.jsonl");
        corpus.write_jsonl(&path).unwrap();
        let back = EvidenceSet::read_jsonl(&path).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.digest(), corpus.digest());
    }

    #[test]
    fn select_alternates_kinds_and_reports_deficit() {
        let u = Universe::new(vec![stock("AAPL", "Apple Inc.")], "mem").unwrap();
        let corpus = build_template_corpus(&u, &CorpusPlan::standard(5.0, &[], 3)).unwrap();
        let two = corpus.select("AAPL", Direction::Buy, 5.0, 2).unwrap();
        assert_eq!(two[0].kind, EvidenceKind::Qualitative);
        assert_eq!(two[1].kind, EvidenceKind::Quantitative);
        let deficit = corpus.select("AAPL", Direction::Sell, 5.0, 5).unwrap_err();
        assert_eq!((deficit.needed, deficit.available), (5, 4));
        assert_eq!(corpus.select("AAPL", Direction::Sell, 10.0, 1).unwrap_err().available, 0);
    }
}
