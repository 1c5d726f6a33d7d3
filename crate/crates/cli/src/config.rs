//! Run configuration: a flat JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bias_probe_core::gateway::ModelConfig;
use bias_probe_core::runner::{
    DEFAULT_BASE_INTENSITY, DEFAULT_DELTAS, DEFAULT_K_PER_SIDE, DEFAULT_RATIOS, DEFAULT_TRIALS,
};
use serde::{Deserialize, Serialize};

use crate::CommonArgs;

/// Every key is optional in the file; missing keys take defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub universe: Option<PathBuf>,
    pub evidence: Option<PathBuf>,
    pub models: Option<Vec<ModelConfig>>,
    pub n: Option<u32>,
    pub k_per_side: Option<usize>,
    pub i_base: Option<f64>,
    pub ratios: Option<Vec<(usize, usize)>>,
    pub deltas: Option<Vec<f64>>,
    pub run_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub qualitative_per_side: Option<usize>,
    pub quantitative_per_side: Option<usize>,
    pub min_preference: Option<f64>,
    pub yates: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub universe: PathBuf,
    pub evidence: PathBuf,
    pub models: Vec<ModelConfig>,
    pub n: u32,
    pub k_per_side: usize,
    pub i_base: f64,
    pub ratios: Vec<(usize, usize)>,
    pub deltas: Vec<f64>,
    pub run_seed: u64,
    pub out: PathBuf,
    pub run_id: String,
    pub qualitative_per_side: usize,
    pub quantitative_per_side: usize,
    pub min_preference: Option<f64>,
    pub yates: bool,
}

/// "0:3,1:2" -> [(0, 3), (1, 2)]
pub fn parse_ratios(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (a, b) = part
                .trim()
                .split_once([':', '|'])
                .with_context(|| format!("--ratios entry {part:?} must look like support:counter"))?;
            Ok((
                a.trim().parse().context("--ratios support count")?,
                b.trim().parse().context("--ratios counter count")?,
            ))
        })
        .collect()
}

pub fn parse_deltas(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|d| d.trim().parse::<f64>().with_context(|| format!("--deltas entry {d:?}"))).collect()
}

fn model_id_for(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "agent".into())
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .with_context(|| format!("invalid config {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let out = args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out"));
        let run_seed = args.run_seed.or(file.run_seed).unwrap_or(0);

        let mut models = if !args.agent.is_empty() || args.endpoint.is_some() {
            let mut m: Vec<ModelConfig> =
                args.agent.iter().map(|p| ModelConfig::scripted(model_id_for(p), p.clone())).collect();
            if let Some(endpoint) = &args.endpoint {
                let id = args.model_id.clone().context("--endpoint needs --model-id")?;
                m.push(ModelConfig::remote(id, endpoint.clone()));
            }
            m
        } else {
            file.models.unwrap_or_default()
        };
        for m in &mut models {
            if let Some(t) = args.temperature {
                m.temperature = t;
            }
            if args.logprobs {
                m.request_logprobs = true;
            }
            if let Some(c) = args.max_concurrent {
                m.max_concurrent = c;
            }
        }

        let ratios = match &args.ratios {
            Some(s) => parse_ratios(s)?,
            None => file.ratios.unwrap_or_else(|| DEFAULT_RATIOS.to_vec()),
        };
        let deltas = match &args.deltas {
            Some(s) => parse_deltas(s)?,
            None => file.deltas.unwrap_or_else(|| DEFAULT_DELTAS.to_vec()),
        };

        let config = RunConfig {
            universe: args.universe.clone().or(file.universe).unwrap_or_else(|| PathBuf::from("data/universe.csv")),
            evidence: args.evidence.clone().or(file.evidence).unwrap_or_else(|| out.join("evidence.jsonl")),
            models,
            n: args.n.or(file.n).unwrap_or(DEFAULT_TRIALS),
            k_per_side: args.k_per_side.or(file.k_per_side).unwrap_or(DEFAULT_K_PER_SIDE),
            i_base: args.i_base.or(file.i_base).unwrap_or(DEFAULT_BASE_INTENSITY),
            ratios,
            deltas,
            run_seed,
            run_id: args.run_id.clone().or(file.run_id).unwrap_or_else(|| format!("run-{run_seed}")),
            out,
            qualitative_per_side: args.qualitative_per_side.or(file.qualitative_per_side).unwrap_or(2),
            quantitative_per_side: args.quantitative_per_side.or(file.quantitative_per_side).unwrap_or(2),
            min_preference: args.min_preference.or(file.min_preference),
            yates: args.yates || file.yates.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            bail!("--n must be at least 1");
        }
        if self.k_per_side == 0 {
            bail!("--k-per-side must be at least 1");
        }
        if !(self.i_base > 0.0 && self.i_base.is_finite()) {
            bail!("--i-base must be positive, got {}", self.i_base);
        }
        if let Some(&(s, c)) = self.ratios.iter().find(|(s, c)| c <= s) {
            bail!("--ratios entry {s}:{c} violates counter > support");
        }
        if let Some(d) = self.deltas.iter().find(|d| d.is_nan() || **d < 0.0) {
            bail!("--deltas entry {d} must be >= 0");
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            bail!("--run-id must be a plain directory name");
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!("model ids must be unique");
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join("runs").join(&self.run_id)
    }

    pub fn log_path(&self) -> PathBuf {
        self.run_dir().join("log.jsonl")
    }

    pub fn results_path(&self) -> PathBuf {
        self.run_dir().join("results.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.run_dir().join("report")
    }

    pub fn cache_path(&self, model_id: &str) -> PathBuf {
        self.out.join("cache").join(format!("{model_id}.jsonl"))
    }

    /// Digest of the settings that shape prompts and decisions; output
    /// locations are left out so relocated runs compare equal.
    pub fn digest(&self) -> Result<String> {
        let models: Vec<serde_json::Value> = self
            .models
            .iter()
            .map(|m| {
                let agent = match &m.agent {
                    Some(p) => Some(bias_probe_core::seed::digest_hex(
                        &std::fs::read(p).with_context(|| format!("cannot read agent {}", p.display()))?,
                    )),
                    None => None,
                };
                Ok(serde_json::json!({
                    "model_id": m.model_id,
                    "backend": m.backend,
                    "endpoint_url": m.endpoint_url,
                    "agent": agent,
                    "temperature": m.temperature,
                    "request_logprobs": m.request_logprobs,
                }))
            })
            .collect::<Result<_>>()?;
        let value = serde_json::json!({
            "models": models,
            "n": self.n,
            "k_per_side": self.k_per_side,
            "i_base": self.i_base,
            "ratios": self.ratios,
            "deltas": self.deltas,
            "run_seed": self.run_seed,
        });
        Ok(bias_probe_core::seed::digest_hex(value.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_and_delta_flags() {
        assert_eq!(parse_ratios("0:3, 1|2").unwrap(), vec![(0, 3), (1, 2)]);
        assert!(parse_ratios("3").is_err());
        assert_eq!(parse_deltas("1,3,5,10").unwrap(), vec![1.0, 3.0, 5.0, 10.0]);
        assert!(parse_deltas("x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 4, "k_per_side": 3, "run_seed": 9, "ratios": [[0, 3]]}"#).unwrap();
        let args = CommonArgs { config: Some(path), n: Some(6), ..CommonArgs::default() };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!((c.n, c.k_per_side, c.run_seed), (6, 3, 9));
        assert_eq!(c.ratios, vec![(0, 3)]);
        assert_eq!(c.run_id, "run-9");
        assert_eq!(c.deltas, DEFAULT_DELTAS.to_vec());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"trials": 4}"#).unwrap();
        assert!(RunConfig::resolve(&CommonArgs { config: Some(path), ..CommonArgs::default() }).is_err());
        let args = CommonArgs { ratios: Some("3:2".into()), ..CommonArgs::default() };
        assert!(RunConfig::resolve(&args).unwrap_err().to_string().contains("--ratios"));
    }
}
