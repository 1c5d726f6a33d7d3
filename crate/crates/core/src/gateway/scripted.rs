//! Parametric confirmation-biased agent used as an offline oracle.
//!
//! The agent scores a context as
//!
//! ```text
//! score = b + Σ w_e · sign(e) · intensity_e / I_base
//! w_e   = 1 + γ  if sign(e) agrees with sign(b)
//!         1 − γ  if it disagrees
//!         1      if b = 0
//! ```
//!
//! and buys with probability `logistic(κ · score)`. Deterministic mode takes
//! the argmax (a score of exactly zero buys); stochastic mode draws from the
//! trial seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionProbs, Backend, GatewayError, ModelReply, Prompt};
use crate::action::Direction;
use crate::protocol::PromptSpec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    Deterministic,
    Stochastic,
}

fn default_base_intensity() -> f64 {
    5.0
}

/// Scripted agent configuration, read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAgent {
    /// ticker -> signed prior b (buy-positive).
    #[serde(default)]
    pub priors: BTreeMap<String, f64>,
    /// Prior for tickers missing from `priors`.
    #[serde(default)]
    pub default_prior: f64,
    /// γ in [0, 1).
    pub bias_gain: f64,
    /// κ > 0.
    pub sharpness: f64,
    pub mode: AgentMode,
    #[serde(default = "default_base_intensity")]
    pub base_intensity_pct: f64,
}

impl ScriptedAgent {
    pub fn new(bias_gain: f64, sharpness: f64, mode: AgentMode) -> Result<Self, GatewayError> {
        let agent = Self {
            priors: BTreeMap::new(),
            default_prior: 0.0,
            bias_gain,
            sharpness,
            mode,
            base_intensity_pct: default_base_intensity(),
        };
        agent.validate()?;
        Ok(agent)
    }

    pub fn with_prior(mut self, ticker: impl Into<String>, prior: f64) -> Self {
        self.priors.insert(ticker.into(), prior);
        self
    }

    pub fn with_default_prior(mut self, prior: f64) -> Self {
        self.default_prior = prior;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..1.0).contains(&self.bias_gain) {
            return Err(GatewayError::Config(format!("bias_gain must lie in [0, 1), got {}", self.bias_gain)));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(GatewayError::Config(format!("sharpness must be positive, got {}", self.sharpness)));
        }
        if self.base_intensity_pct.is_nan() || self.base_intensity_pct <= 0.0 {
            return Err(GatewayError::Config("base_intensity_pct must be positive".into()));
        }
        if let Some((t, b)) = self.priors.iter().find(|(_, b)| !b.is_finite()) {
            return Err(GatewayError::Config(format!("prior for {t} is not finite: {b}")));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| GatewayError::Config(format!("cannot read agent config {}: {e}", path.display())))?;
        let agent: ScriptedAgent = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Config(format!("invalid agent config {}: {e}", path.display())))?;
        agent.validate()?;
        Ok(agent)
    }

    pub fn prior(&self, ticker: &str) -> f64 {
        self.priors.get(ticker).copied().unwrap_or(self.default_prior)
    }

    /// Weighted signed evidence score for one context.
    pub fn score(&self, spec: &PromptSpec, ticker: &str) -> f64 {
        let prior = self.prior(ticker);
        let evidence: f64 = spec
            .context
            .iter()
            .map(|e| {
                let sign = e.direction.sign();
                let weight = if prior == 0.0 {
                    1.0
                } else if sign == prior.signum() {
                    1.0 + self.bias_gain
                } else {
                    1.0 - self.bias_gain
                };
                weight * sign * e.intensity_pct / self.base_intensity_pct
            })
            .sum();
        prior + evidence
    }

    pub fn p_buy(&self, score: f64) -> f64 {
        logistic(self.sharpness * score)
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decides one prompt. Raw text is always a compliant JSON decision.
pub fn scripted_decide(agent: &ScriptedAgent, spec: &PromptSpec, ticker: &str, trial_seed: u64) -> ModelReply {
    let score = agent.score(spec, ticker);
    let p_buy = agent.p_buy(score);
    let action = match agent.mode {
        AgentMode::Deterministic => Direction::from_signed(score),
        AgentMode::Stochastic => {
            let draw: f64 = seed::rng(trial_seed).random();
            if draw < p_buy {
                Direction::Buy
            } else {
                Direction::Sell
            }
        }
    };
    let raw_text = serde_json::json!({
        "decision": action.as_str(),
        "reason": format!("scripted score {score:.4}"),
    })
    .to_string();
    ModelReply { raw_text, action_probs: Some(ActionProbs::new(p_buy)), latency: Duration::ZERO }
}

/// Backend adapter around a [`ScriptedAgent`].
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    agent: ScriptedAgent,
}

impl ScriptedBackend {
    pub fn new(agent: ScriptedAgent) -> Self {
        Self { agent }
    }

    pub fn agent(&self) -> &ScriptedAgent {
        &self.agent
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn complete(&self, prompt: &Prompt, trial_seed: u64) -> Result<ModelReply, GatewayError> {
        let spec = prompt
            .spec
            .as_ref()
            .ok_or_else(|| GatewayError::Config("the scripted backend only answers decision prompts".into()))?;
        Ok(scripted_decide(&self.agent, spec, &prompt.ticker, trial_seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{Evidence, EvidenceKind, Origin};
    use crate::protocol::{PromptStage, TASK};

    fn item(direction: Direction, intensity: f64) -> Evidence {
        Evidence {
            ticker: "T".into(),
            direction,
            kind: EvidenceKind::Qualitative,
            intensity_pct: intensity,
            text: format!("a {intensity}% move"),
            origin: Origin::Template,
        }
    }

    fn spec(buys: usize, sells: usize, sell_intensity: f64) -> PromptSpec {
        let mut context: Vec<_> = (0..buys).map(|_| item(Direction::Buy, 5.0)).collect();
        context.extend((0..sells).map(|_| item(Direction::Sell, sell_intensity)));
        PromptSpec {
            stage: PromptStage::Verification,
            task: TASK.into(),
            context,
            actions: [Direction::Buy, Direction::Sell],
            buy_view: None,
        }
    }

    fn decide(agent: &ScriptedAgent, spec: &PromptSpec) -> (f64, Direction) {
        let reply = scripted_decide(agent, spec, "T", 0);
        let decision = crate::protocol::parse_decision(&reply.raw_text).unwrap();
        (agent.score(spec, "T"), decision.action)
    }

    #[test]
    fn zero_prior_single_buy_item() {
        let agent = ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap();
        let (score, action) = decide(&agent, &spec(1, 0, 5.0));
        assert_eq!(score, 1.0);
        assert_eq!(action, Direction::Buy);
    }

    #[test]
    fn biased_agent_resists_counter_majority() {
        // 1 + 2(1.5) - 3(0.5) = 2.5
        let agent = ScriptedAgent::new(0.5, 1.0, AgentMode::Deterministic).unwrap().with_prior("T", 1.0);
        let (score, action) = decide(&agent, &spec(2, 3, 5.0));
        assert!((score - 2.5).abs() < 1e-12);
        assert_eq!(action, Direction::Buy);
    }

    #[test]
    fn counter_only_flips() {
        // 1 - 3(0.5) = -0.5
        let agent = ScriptedAgent::new(0.5, 1.0, AgentMode::Deterministic).unwrap().with_prior("T", 1.0);
        let (score, action) = decide(&agent, &spec(0, 3, 5.0));
        assert!((score + 0.5).abs() < 1e-12);
        assert_eq!(action, Direction::Sell);
    }

    #[test]
    fn zero_score_buys() {
        let agent = ScriptedAgent::new(0.0, 1.0, AgentMode::Deterministic).unwrap();
        let (score, action) = decide(&agent, &spec(2, 2, 5.0));
        assert_eq!(score, 0.0);
        assert_eq!(action, Direction::Buy);
    }

    #[test]
    fn probabilities_are_normalized() {
        let agent = ScriptedAgent::new(0.3, 2.0, AgentMode::Stochastic).unwrap().with_prior("T", -0.4);
        let reply = scripted_decide(&agent, &spec(1, 2, 8.0), "T", 17);
        let probs = reply.action_probs.unwrap();
        assert!((probs.p_buy + probs.p_sell - 1.0).abs() < 1e-9);
        assert_eq!(reply, scripted_decide(&agent, &spec(1, 2, 8.0), "T", 17));
    }

    #[test]
    fn stochastic_frequency_tracks_probability() {
        // score = 0 + 1 - 1.6 = -0.6 -> p_buy = logistic(-0.6) ≈ 0.354
        let agent = ScriptedAgent::new(0.0, 1.0, AgentMode::Stochastic).unwrap();
        let s = spec(1, 1, 8.0);
        let buys = (0..4000u64)
            .filter(|seed| {
                let reply = scripted_decide(&agent, &s, "T", *seed);
                crate::protocol::parse_decision(&reply.raw_text).unwrap().action == Direction::Buy
            })
            .count();
        let p = logistic(-0.6);
        assert!((buys as f64 / 4000.0 - p).abs() < 0.03);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ScriptedAgent::new(1.0, 1.0, AgentMode::Deterministic).is_err());
        assert!(ScriptedAgent::new(-0.1, 1.0, AgentMode::Deterministic).is_err());
        assert!(ScriptedAgent::new(0.5, 0.0, AgentMode::Deterministic).is_err());
    }

    #[test]
    fn loads_json_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.json");
        std::fs::write(
            &path,
            r#"{"priors": {"AAPL": 1.0, "XOM": -1.0}, "bias_gain": 0.5, "sharpness": 1.0, "mode": "deterministic"}"#,
        )
        .unwrap();
        let agent = ScriptedAgent::load(&path).unwrap();
        assert_eq!(agent.prior("XOM"), -1.0);
        assert_eq!(agent.prior("MSFT"), 0.0);
        assert_eq!(agent.base_intensity_pct, 5.0);
    }
}
