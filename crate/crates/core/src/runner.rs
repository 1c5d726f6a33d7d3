//! Runs the elicitation and verification stages over a universe and keeps
//! the raw trial log from which every aggregate is recomputed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use crate::action::Direction;
use crate::analysis::{self, EntropySource};
use crate::evidence::{generate_style_pair, Evidence, EvidenceError, EvidenceKind, EvidenceSet};
use crate::gateway::{ActionProbs, Gateway, GatewayError, Prompt};
use crate::protocol::{
    build_balanced, build_intensity_imbalanced, build_style_conflict, build_volume_imbalanced, parse_decision,
    render_messages, ChatMessage, Condition, ConditionLabel, ParseCategory, PromptSpec, ProtocolError,
};
use crate::seed;
use crate::universe::{most_preferred_group, PreferredGroup, Stock, Universe, UniverseError};

pub const DEFAULT_TRIALS: u32 = 10;
pub const DEFAULT_K_PER_SIDE: usize = 2;
pub const DEFAULT_BASE_INTENSITY: f64 = 5.0;
pub const DEFAULT_RATIOS: [(usize, usize); 4] = [(0, 3), (1, 2), (1, 3), (2, 3)];
pub const DEFAULT_DELTAS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Universe(#[from] UniverseError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Elicitation,
    Volume,
    Intensity,
    Style,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Elicitation => "elicitation",
            Stage::Volume => "volume",
            Stage::Intensity => "intensity",
            Stage::Style => "style",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source of trial timestamps. Scripted runs use a fixed clock so that their
/// logs replay byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Fixed(u64),
    System,
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::Fixed(ms) => ms,
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    /// Valid decisions wanted per (stock, condition).
    pub n: u32,
    pub k_per_side: usize,
    pub base_intensity: f64,
    pub run_seed: u64,
    pub clock: Clock,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n: DEFAULT_TRIALS,
            k_per_side: DEFAULT_K_PER_SIDE,
            base_intensity: DEFAULT_BASE_INTENSITY,
            run_seed: 0,
            clock: Clock::Fixed(0),
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.n == 0 {
            return Err(RunnerError::Invalid("n must be positive".into()));
        }
        if self.k_per_side == 0 {
            return Err(RunnerError::Invalid("k_per_side must be positive".into()));
        }
        if !(self.base_intensity > 0.0 && self.base_intensity.is_finite()) {
            return Err(RunnerError::Invalid(format!("base intensity must be positive, got {}", self.base_intensity)));
        }
        Ok(())
    }

    /// Attempts allowed per (stock, condition) before the stock is unauditable.
    pub fn attempt_cap(&self) -> u32 {
        2 * self.n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    Decision { action: Direction, reason: String },
    ParseFailure { category: ParseCategory, message: String },
}

impl TrialOutcome {
    pub fn action(&self) -> Option<Direction> {
        match self {
            TrialOutcome::Decision { action, .. } => Some(*action),
            TrialOutcome::ParseFailure { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model: String,
    pub stage: Stage,
    pub ticker: String,
    pub condition: Condition,
    /// Slot in 0..N this attempt tried to fill.
    pub trial_index: u32,
    /// Resample number within the slot.
    pub attempt: u32,
    pub outcome: TrialOutcome,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_probs: Option<ActionProbs>,
    pub prompt_hash: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub model: String,
    pub stage: Stage,
    pub ticker: String,
    pub condition: ConditionLabel,
    pub n_valid: u32,
    pub n_buy: u32,
    pub n_sell: u32,
    pub n_invalid: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_p_buy: Option<f64>,
    pub unauditable: bool,
}

impl ConditionResult {
    /// Decisions against the condition's preferred side.
    pub fn n_flip(&self) -> Option<u32> {
        self.condition.preferred().map(|p| match p {
            Direction::Buy => self.n_sell,
            Direction::Sell => self.n_buy,
        })
    }

    /// (momentum wins, contrarian wins) for style conditions.
    pub fn style_wins(&self) -> Option<(u32, u32)> {
        match self.condition {
            ConditionLabel::Style { momentum_side: Direction::Buy } => Some((self.n_buy, self.n_sell)),
            ConditionLabel::Style { momentum_side: Direction::Sell } => Some((self.n_sell, self.n_buy)),
            _ => None,
        }
    }

    pub fn preference(&self) -> Option<analysis::PreferenceScore> {
        analysis::preference_score(self.n_buy, self.n_sell, self.n_valid).ok()
    }
}

/// Hash of the rendered chat messages.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    seed::digest_hex(&serde_json::to_vec(messages).expect("messages serialize"))
}

fn style_pair_seed(shuffle_seed: u64) -> u64 {
    seed::stable_hash([shuffle_seed.to_string().as_str(), "style-pair"])
}

/// Stored style pair for one trial if the corpus has one, else a template pair.
fn style_pair(
    evidence: &EvidenceSet,
    stock: &Stock,
    momentum_side: Direction,
    base: f64,
    trial_index: u32,
    shuffle_seed: u64,
) -> Result<(Evidence, Evidence), RunnerError> {
    let pick = |kind: EvidenceKind, dir: Direction| -> Vec<&Evidence> {
        evidence
            .for_ticker(&stock.ticker)
            .filter(|e| e.kind == kind && e.direction == dir && (e.intensity_pct - base).abs() < 1e-9)
            .collect()
    };
    let momentum = pick(EvidenceKind::Momentum, momentum_side);
    let contrarian = pick(EvidenceKind::Contrarian, momentum_side.opposite());
    if !momentum.is_empty() && !contrarian.is_empty() {
        let i = (trial_index / 2) as usize;
        return Ok((momentum[i % momentum.len()].clone(), contrarian[i % contrarian.len()].clone()));
    }
    Ok(generate_style_pair(stock, momentum_side, base, style_pair_seed(shuffle_seed))?)
}

/// Rebuilds the prompt a condition describes.
pub fn build_spec(
    condition: &Condition,
    evidence: &EvidenceSet,
    universe: &Universe,
    base: f64,
) -> Result<PromptSpec, RunnerError> {
    let ticker = condition.ticker.as_str();
    let seed = condition.shuffle_seed;
    Ok(match &condition.label {
        ConditionLabel::Balanced { k_per_side } => build_balanced(evidence, ticker, *k_per_side, base, seed)?,
        ConditionLabel::Volume { preferred, support_n, counter_n } => {
            build_volume_imbalanced(evidence, ticker, *preferred, *support_n, *counter_n, base, seed)?
        }
        ConditionLabel::Intensity { preferred, k_per_side, base_pct, delta_pct } => {
            build_intensity_imbalanced(evidence, ticker, *preferred, *k_per_side, *base_pct, *delta_pct, seed)?
        }
        ConditionLabel::Style { momentum_side } => {
            let stock =
                universe.get(ticker).ok_or_else(|| RunnerError::Invalid(format!("{ticker} is not in the universe")))?;
            let pair = style_pair(evidence, stock, *momentum_side, base, condition.trial_index, seed)?;
            build_style_conflict(pair, seed)?
        }
    })
}

/// Recomputes a record's prompt hash from its condition.
pub fn recompute_prompt_hash(
    record: &TrialRecord,
    evidence: &EvidenceSet,
    universe: &Universe,
    base: f64,
) -> Result<String, RunnerError> {
    let spec = build_spec(&record.condition, evidence, universe, base)?;
    let stock = universe
        .get(&record.ticker)
        .ok_or_else(|| RunnerError::Invalid(format!("{} is not in the universe", record.ticker)))?;
    Ok(prompt_hash(&render_messages(&spec, &stock.ticker, &stock.name)))
}

struct Ctx<'a> {
    evidence: &'a EvidenceSet,
    universe: &'a Universe,
    gateway: &'a Gateway,
    params: &'a RunParams,
    stage: Stage,
}

/// Collects N valid decisions for one (stock, label), resampling parse
/// failures with fresh seeds up to the attempt cap.
async fn run_condition(
    ctx: &Ctx<'_>,
    stock: &Stock,
    label_for_slot: &(dyn Fn(u32) -> ConditionLabel + Sync),
) -> Result<Vec<TrialRecord>, RunnerError> {
    let params = ctx.params;
    let mut records = Vec::new();
    let (mut slot, mut retry, mut attempts) = (0u32, 0u32, 0u32);
    while slot < params.n && attempts < params.attempt_cap() {
        let label = label_for_slot(slot);
        let shuffle_seed = seed::trial_seed(params.run_seed, &stock.ticker, &label.to_string(), slot, retry);
        let condition = Condition { label, ticker: stock.ticker.clone(), trial_index: slot, shuffle_seed };
        let spec = build_spec(&condition, ctx.evidence, ctx.universe, params.base_intensity)?;
        let messages = render_messages(&spec, &stock.ticker, &stock.name);
        let hash = prompt_hash(&messages);
        let prompt = Prompt { ticker: stock.ticker.clone(), messages, spec: Some(spec) };
        let reply = ctx.gateway.complete(&prompt, shuffle_seed).await?;
        let outcome = match parse_decision(&reply.raw_text) {
            Ok(d) => TrialOutcome::Decision { action: d.action, reason: d.reason },
            Err(e) => TrialOutcome::ParseFailure { category: e.category, message: e.message },
        };
        let valid = outcome.action().is_some();
        records.push(TrialRecord {
            model: ctx.gateway.model_id().to_string(),
            stage: ctx.stage,
            ticker: stock.ticker.clone(),
            condition,
            trial_index: slot,
            attempt: retry,
            outcome,
            raw: reply.raw_text,
            action_probs: reply.action_probs,
            prompt_hash: hash,
            timestamp_ms: params.clock.now_ms(),
        });
        attempts += 1;
        if valid {
            slot += 1;
            retry = 0;
        } else {
            retry += 1;
        }
    }
    if slot < params.n {
        tracing::warn!(ticker = %stock.ticker, stage = %ctx.stage, attempts, "attempt cap reached; stock is unauditable");
    }
    Ok(records)
}

/// Runs `plan` (stock, labels) entries concurrently, preserving plan order.
async fn run_plan(ctx: &Ctx<'_>, plan: Vec<(&Stock, Vec<LabelFn>)>) -> Result<StageOutput, RunnerError> {
    ctx.params.validate()?;
    let width = ctx.gateway.config().max_concurrent.max(1);
    let per_stock: Vec<Vec<TrialRecord>> = stream::iter(plan)
        .map(|(stock, labels)| async move {
            let mut out = Vec::new();
            for label in &labels {
                out.extend(run_condition(ctx, stock, label.as_ref()).await?);
            }
            Ok::<_, RunnerError>(out)
        })
        .buffered(width)
        .try_collect()
        .await?;
    let records: Vec<TrialRecord> = per_stock.into_iter().flatten().collect();
    let results = aggregate(&records, ctx.params.n);
    Ok(StageOutput { records, results })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub records: Vec<TrialRecord>,
    pub results: Vec<ConditionResult>,
}

impl StageOutput {
    pub fn unauditable(&self) -> Vec<&ConditionResult> {
        self.results.iter().filter(|r| r.unauditable).collect()
    }
}

type LabelFn = Box<dyn Fn(u32) -> ConditionLabel + Send + Sync>;

fn fixed(label: ConditionLabel) -> LabelFn {
    Box::new(move |_| label.clone())
}

pub async fn run_elicitation(
    universe: &Universe,
    evidence: &EvidenceSet,
    gateway: &Gateway,
    params: &RunParams,
) -> Result<StageOutput, RunnerError> {
    let ctx = Ctx { evidence, universe, gateway, params, stage: Stage::Elicitation };
    let plan = universe
        .stocks()
        .iter()
        .map(|s| (s, vec![fixed(ConditionLabel::Balanced { k_per_side: params.k_per_side })]))
        .collect();
    run_plan(&ctx, plan).await
}

fn members<'a>(universe: &'a Universe, group: &PreferredGroup) -> Result<Vec<&'a Stock>, RunnerError> {
    group
        .members
        .iter()
        .map(|t| {
            universe.get(t).ok_or_else(|| RunnerError::Invalid(format!("group member {t} is not in the universe")))
        })
        .collect()
}

pub async fn run_volume_verification(
    universe: &Universe,
    evidence: &EvidenceSet,
    group: &PreferredGroup,
    ratios: &[(usize, usize)],
    gateway: &Gateway,
    params: &RunParams,
) -> Result<StageOutput, RunnerError> {
    for &(support_n, counter_n) in ratios {
        if counter_n <= support_n {
            return Err(ProtocolError::VolumeContract { support_n, counter_n }.into());
        }
    }
    let ctx = Ctx { evidence, universe, gateway, params, stage: Stage::Volume };
    let preferred = group.direction;
    let plan = members(universe, group)?
        .into_iter()
        .map(|s| {
            let labels = ratios
                .iter()
                .map(|&(support_n, counter_n)| fixed(ConditionLabel::Volume { preferred, support_n, counter_n }))
                .collect();
            (s, labels)
        })
        .collect();
    run_plan(&ctx, plan).await
}

pub async fn run_intensity_verification(
    universe: &Universe,
    evidence: &EvidenceSet,
    group: &PreferredGroup,
    deltas: &[f64],
    gateway: &Gateway,
    params: &RunParams,
) -> Result<StageOutput, RunnerError> {
    if let Some(d) = deltas.iter().find(|d| d.is_nan() || **d < 0.0) {
        return Err(ProtocolError::NegativeDelta(*d).into());
    }
    let ctx = Ctx { evidence, universe, gateway, params, stage: Stage::Intensity };
    let (preferred, k_per_side, base_pct) = (group.direction, params.k_per_side, params.base_intensity);
    let plan = members(universe, group)?
        .into_iter()
        .map(|s| {
            let labels = deltas
                .iter()
                .map(|&delta_pct| fixed(ConditionLabel::Intensity { preferred, k_per_side, base_pct, delta_pct }))
                .collect();
            (s, labels)
        })
        .collect();
    run_plan(&ctx, plan).await
}

/// Side the momentum view takes in a style trial. Alternates across trials
/// and starts on opposite sides for neighbouring stocks.
pub fn momentum_side(stock_index: usize, trial_index: u32) -> Direction {
    if (stock_index + trial_index as usize).is_multiple_of(2) {
        Direction::Buy
    } else {
        Direction::Sell
    }
}

pub async fn run_style_conflict(
    universe: &Universe,
    evidence: &EvidenceSet,
    gateway: &Gateway,
    params: &RunParams,
) -> Result<StageOutput, RunnerError> {
    let ctx = Ctx { evidence, universe, gateway, params, stage: Stage::Style };
    let plan = universe
        .stocks()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label: LabelFn = Box::new(move |slot| ConditionLabel::Style { momentum_side: momentum_side(i, slot) });
            (s, vec![label])
        })
        .collect();
    run_plan(&ctx, plan).await
}

/// Folds trial records into per-(model, stage, ticker, condition) counts, in
/// order of first appearance.
pub fn aggregate(records: &[TrialRecord], n: u32) -> Vec<ConditionResult> {
    struct Acc {
        result: ConditionResult,
        p_sum: f64,
        p_count: u32,
    }
    let mut order: Vec<(String, Stage, String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, Stage, String, String), Acc> = BTreeMap::new();
    for r in records {
        let key = (r.model.clone(), r.stage, r.ticker.clone(), r.condition.label.to_string());
        let entry = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Acc {
                result: ConditionResult {
                    model: r.model.clone(),
                    stage: r.stage,
                    ticker: r.ticker.clone(),
                    condition: r.condition.label.clone(),
                    n_valid: 0,
                    n_buy: 0,
                    n_sell: 0,
                    n_invalid: 0,
                    mean_p_buy: None,
                    unauditable: false,
                },
                p_sum: 0.0,
                p_count: 0,
            }
        });
        match r.outcome.action() {
            Some(action) => {
                entry.result.n_valid += 1;
                match action {
                    Direction::Buy => entry.result.n_buy += 1,
                    Direction::Sell => entry.result.n_sell += 1,
                }
                if let Some(p) = r.action_probs {
                    entry.p_sum += p.p_buy;
                    entry.p_count += 1;
                }
            }
            None => entry.result.n_invalid += 1,
        }
    }
    // style trials alternate the momentum side, so one stock's N slots are
    // split across two labels and audited together
    let mut style_valid: BTreeMap<(String, String), u32> = BTreeMap::new();
    for a in acc.values().filter(|a| a.result.stage == Stage::Style) {
        *style_valid.entry((a.result.model.clone(), a.result.ticker.clone())).or_default() += a.result.n_valid;
    }
    order
        .into_iter()
        .map(|key| {
            let Acc { mut result, p_sum, p_count } = acc.remove(&key).expect("key recorded");
            // a mean over a subset of trials would misstate the distribution
            if p_count > 0 && p_count == result.n_valid {
                result.mean_p_buy = Some(p_sum / p_count as f64);
            }
            let valid = match result.stage {
                Stage::Style => style_valid[&(result.model.clone(), result.ticker.clone())],
                _ => result.n_valid,
            };
            result.unauditable = valid < n;
            result
        })
        .collect()
}

/// Signed elicitation preference per auditable ticker for one model.
pub fn signed_scores(results: &[ConditionResult], model: &str) -> BTreeMap<String, f64> {
    results
        .iter()
        .filter(|r| r.model == model && r.stage == Stage::Elicitation && !r.unauditable)
        .filter_map(|r| Some((r.ticker.clone(), r.preference()?.signed)))
        .collect()
}

/// Picks G* from elicitation results, dropping unauditable stocks, then
/// optionally keeps only members whose |preference| reaches `min_preference`.
pub fn select_group(
    grouping: &BTreeMap<String, String>,
    results: &[ConditionResult],
    model: &str,
    min_preference: Option<f64>,
) -> Result<PreferredGroup, RunnerError> {
    let scores = signed_scores(results, model);
    if scores.is_empty() {
        return Err(RunnerError::Invalid(format!("no auditable elicitation results for model {model}")));
    }
    let grouping: BTreeMap<String, String> =
        grouping.iter().filter(|(t, _)| scores.contains_key(*t)).map(|(t, g)| (t.clone(), g.clone())).collect();
    let mut group = most_preferred_group(&grouping, &scores)?;
    if let Some(min) = min_preference {
        group.members.retain(|t| scores[t].abs() >= min);
    }
    Ok(group)
}

/// One results.jsonl record: counts plus derived metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub result: ConditionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_source: Option<EntropySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum_wins: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrarian_wins: Option<u32>,
}

impl ResultRow {
    pub fn from_result(result: ConditionResult) -> Self {
        let pref = result.preference();
        let flip = result.n_flip().and_then(|f| analysis::flip_rate(f, result.n_valid).ok());
        let entropy = analysis::result_entropy(&result);
        let wins = result.style_wins();
        Self {
            signed: pref.map(|p| p.signed),
            pi: pref.map(|p| p.pi),
            flip_rate: flip,
            entropy_bits: entropy.map(|e| e.0),
            entropy_source: entropy.map(|e| e.1),
            momentum_wins: wins.map(|w| w.0),
            contrarian_wins: wins.map(|w| w.1),
            result,
        }
    }
}

/// Header of one (stage, model) block in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub stage: Stage,
    pub model: String,
    pub run_seed: u64,
    pub n: u32,
    pub k_per_side: usize,
    pub base_intensity: f64,
    pub config_digest: String,
    pub corpus_digest: String,
    pub universe_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<PreferredGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Trial(TrialRecord),
}

impl LogLine {
    fn key(&self) -> (Stage, &str) {
        match self {
            LogLine::Header(h) => (h.stage, &h.model),
            LogLine::Trial(t) => (t.stage, &t.model),
        }
    }
}

/// The JSON-lines run log: per (stage, model), a header and its trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    lines: Vec<LogLine>,
}

impl RunLog {
    /// Reads a log; a missing file is an empty log.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => return Err(RunnerError::Io { path: path.into(), source }),
        };
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|source| RunnerError::Json { path: path.into(), line: i + 1, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { lines })
    }

    /// Replaces the block for (header.stage, header.model).
    pub fn replace(&mut self, header: LogHeader, records: Vec<TrialRecord>) {
        let (stage, model) = (header.stage, header.model.clone());
        self.lines.retain(|l| l.key() != (stage, model.as_str()));
        self.lines.push(LogLine::Header(header));
        self.lines.extend(records.into_iter().map(LogLine::Trial));
    }

    pub fn headers(&self) -> impl Iterator<Item = &LogHeader> {
        self.lines.iter().filter_map(|l| match l {
            LogLine::Header(h) => Some(h),
            LogLine::Trial(_) => None,
        })
    }

    pub fn header(&self, stage: Stage, model: &str) -> Option<&LogHeader> {
        self.headers().find(|h| h.stage == stage && h.model == model)
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.lines.iter().filter_map(|l| match l {
            LogLine::Trial(t) => Some(t),
            LogLine::Header(_) => None,
        })
    }

    /// Aggregates every block with its own N.
    pub fn results(&self) -> Vec<ConditionResult> {
        let mut out = Vec::new();
        for h in self.headers() {
            let block: Vec<TrialRecord> =
                self.records().filter(|r| r.stage == h.stage && r.model == h.model).cloned().collect();
            out.extend(aggregate(&block, h.n));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("log line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RunnerError> {
        write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }
}

pub fn results_jsonl(results: &[ConditionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(&ResultRow::from_result(r.clone())).expect("row serializes"));
        out.push('\n');
    }
    out
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, RunnerError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io { path: path.into(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| RunnerError::Json { path: path.into(), line: i + 1, source })
        })
        .collect()
}

/// Writes through a temporary sibling so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let io = |source| RunnerError::Io { path: path.into(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(io)?;
    file.write_all(bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use async_trait::async_trait;

    use super::*;
    use crate::evidence::{build_template_corpus, CorpusPlan};
    use crate::gateway::{AgentMode, Backend, ModelConfig, ModelReply, ScriptedAgent, ScriptedBackend};
    use crate::universe::{parse_universe, Sector};

    fn universe() -> Universe {
        let csv = "ticker,name,sector,market_cap\n\
                   AAA,Alpha Corp,Technology,300\n\
                   BBB,Beta Corp,Technology,200\n\
                   CCC,Gamma Corp,Energy,100\n";
        parse_universe(csv.as_bytes(), "mem").unwrap()
    }

    fn corpus(u: &Universe) -> EvidenceSet {
        build_template_corpus(u, &CorpusPlan::standard(5.0, &DEFAULT_DELTAS, 11)).unwrap()
    }

    fn scripted(agent: ScriptedAgent) -> Gateway {
        Gateway::with_backend(ModelConfig::scripted("agent", "unused.json"), Arc::new(ScriptedBackend::new(agent)))
    }

    fn params(n: u32) -> RunParams {
        RunParams { n, run_seed: 42, ..RunParams::default() }
    }

    #[tokio::test]
    async fn saturating_prior_buys_every_trial() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap().with_default_prior(10.0));
        let out = run_elicitation(&u, &corpus(&u), &g, &params(10)).await.unwrap();
        assert_eq!(out.results.len(), 3);
        for r in &out.results {
            assert_eq!((r.n_buy, r.n_sell, r.n_invalid), (10, 0, 0));
        }
    }

    #[tokio::test]
    async fn zero_prior_tie_buys() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap());
        let out = run_elicitation(&u, &corpus(&u), &g, &params(10)).await.unwrap();
        assert!(out.results.iter().all(|r| r.n_buy == 10));
    }

    struct Hold;

    #[async_trait]
    impl Backend for Hold {
        async fn complete(&self, _: &Prompt, _: u64) -> Result<ModelReply, GatewayError> {
            Ok(ModelReply {
                raw_text: r#"{"decision": "hold", "reason": "unsure"}"#.into(),
                action_probs: None,
                latency: Default::default(),
            })
        }
    }

    #[tokio::test]
    async fn hold_backend_is_unauditable_after_cap() {
        let u = universe();
        let g = Gateway::with_backend(ModelConfig::scripted("hold", "x"), Arc::new(Hold));
        let out = run_elicitation(&u, &corpus(&u), &g, &params(10)).await.unwrap();
        for r in &out.results {
            assert!(r.unauditable);
            assert_eq!((r.n_valid, r.n_invalid), (0, 20));
        }
        assert_eq!(out.records.len(), 60);
        assert!(out
            .records
            .iter()
            .all(|r| matches!(r.outcome, TrialOutcome::ParseFailure { category: ParseCategory::ForbiddenAction, .. })));
        // fresh seeds on every resample
        let seeds: std::collections::BTreeSet<u64> = out.records.iter().map(|r| r.condition.shuffle_seed).collect();
        assert_eq!(seeds.len(), 60);
    }

    fn group(u: &Universe, tickers: &[&str], direction: Direction) -> PreferredGroup {
        let _ = u;
        PreferredGroup {
            group_key: "Technology".into(),
            direction,
            mean_score: 1.0,
            members: tickers.iter().map(|t| t.to_string()).collect(),
        }
    }

    #[tokio::test]
    async fn volume_flips_follow_the_closed_form() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.5, 1.0, AgentMode::Deterministic).unwrap().with_default_prior(1.0));
        let grp = group(&u, &["AAA", "BBB"], Direction::Buy);
        let ratios = [(0, 3), (1, 2), (2, 3)];
        let out = run_volume_verification(&u, &corpus(&u), &grp, &ratios, &g, &params(10)).await.unwrap();
        assert_eq!(out.results.len(), 6);
        let flips: Vec<u32> = out.results.iter().map(|r| r.n_flip().unwrap()).collect();
        // (0,3): 1 - 1.5 < 0; (1,2): 1 + 1.5 - 1 > 0; (2,3): 2.5 > 0
        assert_eq!(flips, vec![10, 0, 0, 10, 0, 0]);
    }

    #[tokio::test]
    async fn volume_rejects_bad_ratio() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.5, 1.0, AgentMode::Deterministic).unwrap());
        let grp = group(&u, &["AAA"], Direction::Buy);
        let err = run_volume_verification(&u, &corpus(&u), &grp, &[(3, 2)], &g, &params(2)).await.unwrap_err();
        assert!(matches!(err, RunnerError::Protocol(ProtocolError::VolumeContract { .. })));
    }

    #[tokio::test]
    async fn intensity_flips_are_monotone_in_delta() {
        let u = universe();
        let agent = ScriptedAgent::new(0.1, 1.0, AgentMode::Deterministic)
            .unwrap()
            .with_prior("AAA", 0.3)
            .with_prior("BBB", 1.2);
        let g = scripted(agent);
        let grp = group(&u, &["AAA", "BBB"], Direction::Buy);
        let out = run_intensity_verification(&u, &corpus(&u), &grp, &DEFAULT_DELTAS, &g, &params(4)).await.unwrap();
        for ticker in ["AAA", "BBB"] {
            let flips: Vec<u32> =
                out.results.iter().filter(|r| r.ticker == ticker).map(|r| r.n_flip().unwrap()).collect();
            assert_eq!(flips.len(), 4);
            assert!(flips.windows(2).all(|w| w[0] <= w[1]), "{ticker}: {flips:?}");
        }
    }

    #[tokio::test]
    async fn delta_zero_matches_balanced_composition() {
        let u = universe();
        let ev = corpus(&u);
        let cond = Condition {
            label: ConditionLabel::Intensity {
                preferred: Direction::Buy,
                k_per_side: 2,
                base_pct: 5.0,
                delta_pct: 0.0,
            },
            ticker: "AAA".into(),
            trial_index: 0,
            shuffle_seed: 3,
        };
        let spec = build_spec(&cond, &ev, &u, 5.0).unwrap();
        let balanced = build_balanced(&ev, "AAA", 2, 5.0, 3).unwrap();
        assert_eq!(spec.composition(), balanced.composition());
    }

    #[tokio::test]
    async fn always_buy_splits_style_wins_evenly() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap().with_default_prior(10.0));
        let out = run_style_conflict(&u, &corpus(&u), &g, &params(10)).await.unwrap();
        let mut per_ticker: BTreeMap<String, (u32, u32)> = BTreeMap::new();
        for r in &out.results {
            let (m, c) = r.style_wins().unwrap();
            let e = per_ticker.entry(r.ticker.clone()).or_default();
            e.0 += m;
            e.1 += c;
        }
        assert!(per_ticker.values().all(|&w| w == (5, 5)), "{per_ticker:?}");
        assert!(out.unauditable().is_empty());
    }

    #[tokio::test]
    async fn odd_n_sides_differ_by_one() {
        let u = universe();
        let g = scripted(ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap());
        let out = run_style_conflict(&u, &corpus(&u), &g, &params(5)).await.unwrap();
        for t in ["AAA", "BBB", "CCC"] {
            let sides: Vec<u32> = out.results.iter().filter(|r| r.ticker == t).map(|r| r.n_valid).collect();
            assert_eq!(sides.iter().sum::<u32>(), 5);
            assert!(sides.iter().max().unwrap() - sides.iter().min().unwrap() <= 1);
        }
    }

    struct KeysOnContrarian;

    #[async_trait]
    impl Backend for KeysOnContrarian {
        async fn complete(&self, prompt: &Prompt, _: u64) -> Result<ModelReply, GatewayError> {
            let spec = prompt.spec.as_ref().unwrap();
            let side = spec.context.iter().find(|e| e.text.contains("contrarian")).unwrap().direction;
            Ok(ModelReply {
                raw_text: format!(r#"{{"decision": "{side}", "reason": "contrarian view"}}"#),
                action_probs: None,
                latency: Default::default(),
            })
        }
    }

    #[tokio::test]
    async fn contrarian_fixture_wins_every_trial() {
        let u = universe();
        let g = Gateway::with_backend(ModelConfig::scripted("c", "x"), Arc::new(KeysOnContrarian));
        let out = run_style_conflict(&u, &corpus(&u), &g, &params(10)).await.unwrap();
        let (m, c) = out.results.iter().filter_map(|r| r.style_wins()).fold((0, 0), |a, w| (a.0 + w.0, a.1 + w.1));
        assert_eq!((m, c), (0, 30));
    }

    #[tokio::test]
    async fn replay_and_pure_fold() {
        let u = universe();
        let ev = corpus(&u);
        let agent = ScriptedAgent::new(0.4, 1.5, AgentMode::Stochastic).unwrap().with_prior("AAA", 0.5);
        let a = run_elicitation(&u, &ev, &scripted(agent.clone()), &params(6)).await.unwrap();
        let b = run_elicitation(&u, &ev, &scripted(agent), &params(6)).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(aggregate(&a.records, 6), a.results);
        for r in &a.records {
            assert_eq!(recompute_prompt_hash(r, &ev, &u, 5.0).unwrap(), r.prompt_hash);
            assert!(r.trial_index < 6);
        }
        assert!(a.results.iter().all(|r| r.mean_p_buy.is_some()));
    }

    #[tokio::test]
    async fn log_roundtrip_and_stage_replacement() {
        let u = universe();
        let ev = corpus(&u);
        let g = scripted(ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap());
        let out = run_elicitation(&u, &ev, &g, &params(3)).await.unwrap();
        let header = LogHeader {
            stage: Stage::Elicitation,
            model: "agent".into(),
            run_seed: 42,
            n: 3,
            k_per_side: 2,
            base_intensity: 5.0,
            config_digest: "c".into(),
            corpus_digest: ev.digest(),
            universe_digest: "u".into(),
            group: None,
            ratios: vec![],
            deltas: vec![],
        };
        let mut log = RunLog::default();
        log.replace(header.clone(), out.records.clone());
        log.replace(header, out.records.clone());
        assert_eq!(log.records().count(), out.records.len());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        log.write(&path).unwrap();
        let back = RunLog::read(&path).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.results(), out.results);

        let rows = results_jsonl(&out.results);
        let rpath = dir.path().join("results.jsonl");
        std::fs::write(&rpath, rows).unwrap();
        let parsed = read_results(&rpath).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].pi, Some(1.0));
        assert_eq!(parsed[0].entropy_source, Some(EntropySource::Logprob));
    }

    #[test]
    fn group_selection_skips_unauditable() {
        let mut grouping = BTreeMap::new();
        grouping.insert("AAA".to_string(), Sector::Technology.label().to_string());
        grouping.insert("CCC".to_string(), Sector::Energy.label().to_string());
        let mk = |t: &str, b, s, unaud| ConditionResult {
            model: "m".into(),
            stage: Stage::Elicitation,
            ticker: t.into(),
            condition: ConditionLabel::Balanced { k_per_side: 2 },
            n_valid: b + s,
            n_buy: b,
            n_sell: s,
            n_invalid: 0,
            mean_p_buy: None,
            unauditable: unaud,
        };
        let results = vec![mk("AAA", 5, 5, false), mk("CCC", 10, 0, true)];
        let g = select_group(&grouping, &results, "m", None).unwrap();
        assert_eq!(g.group_key, "Technology");
        let g = select_group(&grouping, &[mk("AAA", 3, 7, false)], "m", Some(0.5)).unwrap();
        assert!(g.members.is_empty());
        assert!(select_group(&grouping, &results, "other", None).is_err());
    }
}
