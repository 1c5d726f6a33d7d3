use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context};
use bias_probe_core::analysis::{self, condition_class};
use bias_probe_core::evidence::{
    build_template_corpus, format_intensity, generate_llm_evidence, generate_llm_style_pair, CorpusPlan, EvidenceError,
    EvidenceKind, EvidenceSet,
};
use bias_probe_core::gateway::{BackendKind, Gateway, GatewayError};
use bias_probe_core::protocol::ProtocolError;
use bias_probe_core::report::{build_report, write_report};
use bias_probe_core::runner::{
    self, results_jsonl, select_group, write_atomic, Clock, ConditionResult, LogHeader, RunLog, RunParams, RunnerError,
    Stage, StageOutput,
};
use bias_probe_core::universe::{assign_quantiles, load_universe, PreferredGroup, Universe, UniverseError};
use bias_probe_core::{seed, Direction};

use crate::config::RunConfig;
use crate::{Command, CommonArgs, GroupingArg, Mode, Source};

pub const USAGE: u8 = 2;
pub const UPSTREAM: u8 = 3;
pub const BACKEND: u8 = 4;
pub const UNAUDITABLE: u8 = 5;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, Failure>;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure { code, error: error.into() }
}

fn gateway_code(e: &GatewayError) -> u8 {
    match e {
        GatewayError::Config(_) => USAGE,
        _ => BACKEND,
    }
}

fn runner_failure(e: RunnerError) -> Failure {
    let code = match &e {
        RunnerError::Gateway(g) | RunnerError::Evidence(EvidenceError::Gateway(g)) => gateway_code(g),
        RunnerError::Protocol(ProtocolError::Insufficient(_)) => UPSTREAM,
        RunnerError::Io { .. } | RunnerError::Json { .. } => UPSTREAM,
        _ => USAGE,
    };
    fail(code, e)
}

fn evidence_failure(e: EvidenceError) -> Failure {
    let code = match &e {
        EvidenceError::Gateway(g) => gateway_code(g),
        EvidenceError::Generation { .. } => BACKEND,
        _ => USAGE,
    };
    fail(code, e)
}

pub async fn dispatch(args: CommonArgs, command: Command) -> CmdResult {
    let cfg = RunConfig::resolve(&args).map_err(|e| fail(USAGE, e))?;
    match command {
        Command::Generate { source } => generate(&cfg, source).await,
        Command::Elicit => elicit(&cfg).await,
        Command::Verify { mode, grouping } => verify(&cfg, mode, grouping).await,
        Command::Style => style(&cfg).await,
        Command::Report => report(&cfg),
    }
}

fn universe(cfg: &RunConfig) -> CmdResult<Universe> {
    load_universe(&cfg.universe).map_err(|e| {
        let e = anyhow!(e).context(format!("universe {}", cfg.universe.display()));
        fail(USAGE, e)
    })
}

fn universe_digest(cfg: &RunConfig) -> CmdResult<String> {
    let bytes = std::fs::read(&cfg.universe).map_err(|e| fail(USAGE, e))?;
    Ok(seed::digest_hex(&bytes))
}

fn evidence(cfg: &RunConfig) -> CmdResult<EvidenceSet> {
    if !cfg.evidence.exists() {
        return Err(fail(
            UPSTREAM,
            anyhow!("evidence store {} not found; run `bias-probe generate` first", cfg.evidence.display()),
        ));
    }
    EvidenceSet::read_jsonl(&cfg.evidence).map_err(|e| fail(UPSTREAM, e))
}

fn gateways(cfg: &RunConfig) -> CmdResult<Vec<Gateway>> {
    if cfg.models.is_empty() {
        return Err(fail(USAGE, anyhow!("no models configured; pass --agent <file> or --endpoint with --model-id")));
    }
    cfg.models
        .iter()
        .map(|m| {
            let gateway = Gateway::from_config(m.clone()).map_err(|e| fail(gateway_code(&e), e))?;
            match m.backend {
                BackendKind::Remote => {
                    gateway.with_disk_cache(cfg.cache_path(&m.model_id)).map_err(|e| fail(UPSTREAM, e))
                }
                BackendKind::Scripted => Ok(gateway),
            }
        })
        .collect()
}

fn params(cfg: &RunConfig) -> RunParams {
    let remote = cfg.models.iter().any(|m| m.backend == BackendKind::Remote);
    RunParams {
        n: cfg.n,
        k_per_side: cfg.k_per_side,
        base_intensity: cfg.i_base,
        run_seed: cfg.run_seed,
        clock: if remote { Clock::System } else { Clock::Fixed(0) },
    }
}

fn header(cfg: &RunConfig, stage: Stage, model: &str, corpus: &EvidenceSet) -> CmdResult<LogHeader> {
    Ok(LogHeader {
        stage,
        model: model.to_string(),
        run_seed: cfg.run_seed,
        n: cfg.n,
        k_per_side: cfg.k_per_side,
        base_intensity: cfg.i_base,
        config_digest: cfg.digest().map_err(|e| fail(USAGE, e))?,
        corpus_digest: corpus.digest(),
        universe_digest: universe_digest(cfg)?,
        group: None,
        ratios: Vec::new(),
        deltas: Vec::new(),
    })
}

fn read_log(cfg: &RunConfig) -> CmdResult<RunLog> {
    RunLog::read(cfg.log_path()).map_err(|e| fail(UPSTREAM, e))
}

/// Stores a finished stage and rewrites results.jsonl from the whole log.
fn persist(cfg: &RunConfig, log: &mut RunLog, header: LogHeader, output: StageOutput) -> CmdResult {
    log.replace(header, output.records);
    log.write(cfg.log_path()).map_err(|e| fail(UPSTREAM, e))?;
    write_atomic(&cfg.results_path(), results_jsonl(&log.results()).as_bytes()).map_err(|e| fail(UPSTREAM, e))
}

fn unauditable_check(results: &[&ConditionResult]) -> CmdResult {
    if results.is_empty() {
        return Ok(());
    }
    let mut tickers: Vec<String> = Vec::new();
    for r in results {
        let t = format!("{}:{}", r.model, r.ticker);
        if !tickers.contains(&t) {
            tickers.push(t);
        }
    }
    Err(fail(
        UNAUDITABLE,
        anyhow!("{} stock(s) unauditable (invalid-output cap reached): {}", tickers.len(), tickers.join(", ")),
    ))
}

async fn generate(cfg: &RunConfig, source: Source) -> CmdResult {
    let universe = universe(cfg)?;
    let mut intensities = vec![cfg.i_base];
    intensities.extend(cfg.deltas.iter().filter(|d| **d > 0.0).map(|d| cfg.i_base + d));
    let per_side = vec![
        (EvidenceKind::Qualitative, cfg.qualitative_per_side),
        (EvidenceKind::Quantitative, cfg.quantitative_per_side),
    ];
    let set = match source {
        Source::Template => {
            let mut plan = CorpusPlan::standard(cfg.i_base, &cfg.deltas, cfg.run_seed);
            plan.per_side = per_side;
            build_template_corpus(&universe, &plan).map_err(evidence_failure)?
        }
        Source::Llm => {
            let generator = gateways(cfg)?.into_iter().next().expect("at least one model");
            let mut set = EvidenceSet::new();
            for stock in universe.stocks() {
                for &intensity in &intensities {
                    for direction in Direction::BOTH {
                        for &(kind, count) in per_side.iter().filter(|(_, c)| *c > 0) {
                            let s = seed::stable_hash([
                                cfg.run_seed.to_string().as_str(),
                                &stock.ticker,
                                kind.as_str(),
                                direction.as_str(),
                                &intensity.to_string(),
                            ]);
                            let items = generate_llm_evidence(stock, direction, kind, intensity, count, &generator, s)
                                .await
                                .map_err(evidence_failure)?;
                            set.extend(items).map_err(evidence_failure)?;
                        }
                    }
                }
                for side in Direction::BOTH {
                    let s =
                        seed::stable_hash([cfg.run_seed.to_string().as_str(), &stock.ticker, "style", side.as_str()]);
                    let (m, c) = generate_llm_style_pair(stock, side, cfg.i_base, &generator, s)
                        .await
                        .map_err(evidence_failure)?;
                    set.extend([m, c]).map_err(evidence_failure)?;
                }
            }
            set
        }
    };
    set.write_jsonl(&cfg.evidence).map_err(|e| fail(UPSTREAM, e))?;

    println!("wrote {} evidence items for {} stocks to {}", set.len(), universe.len(), cfg.evidence.display());
    let mut totals: Vec<(String, f64, usize, usize)> = Vec::new();
    for row in set.balance() {
        let kind = row.kind.to_string();
        match totals.iter_mut().find(|t| t.0 == kind && t.1 == row.intensity_pct) {
            Some(t) => {
                t.2 += row.buy;
                t.3 += row.sell;
            }
            None => totals.push((kind, row.intensity_pct, row.buy, row.sell)),
        }
    }
    totals.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    println!("{:<14} {:>9} {:>6} {:>6}", "kind", "intensity", "buy", "sell");
    for (kind, intensity, buy, sell) in totals {
        println!("{kind:<14} {:>9} {buy:>6} {sell:>6}", format!("{}%", format_intensity(intensity)));
    }
    println!("balanced: {}", if set.is_balanced() { "yes" } else { "no" });
    Ok(())
}

async fn elicit(cfg: &RunConfig) -> CmdResult {
    let universe = universe(cfg)?;
    let corpus = evidence(cfg)?;
    let gateways = gateways(cfg)?;
    let params = params(cfg);
    let mut log = read_log(cfg)?;
    let mut unauditable = Vec::new();
    for gateway in &gateways {
        let output = runner::run_elicitation(&universe, &corpus, gateway, &params).await.map_err(runner_failure)?;
        println!("model {}: elicitation over {} stocks, N = {}", gateway.model_id(), universe.len(), cfg.n);
        println!("{:<8} {:>5} {:>5} {:>7} {:>7} {:>7}", "ticker", "buy", "sell", "invalid", "signed", "pi");
        for r in &output.results {
            let (signed, pi) = r.preference().map(|p| (p.signed, p.pi)).unwrap_or((f64::NAN, f64::NAN));
            let flag = if r.unauditable { "  unauditable" } else { "" };
            println!(
                "{:<8} {:>5} {:>5} {:>7} {:>7.2} {:>7.2}{flag}",
                r.ticker, r.n_buy, r.n_sell, r.n_invalid, signed, pi
            );
        }
        unauditable.extend(output.unauditable().into_iter().cloned());
        let header = header(cfg, Stage::Elicitation, gateway.model_id(), &corpus)?;
        persist(cfg, &mut log, header, output)?;
    }
    println!("run log: {}", cfg.log_path().display());
    unauditable_check(&unauditable.iter().collect::<Vec<_>>())
}

fn grouping_map(universe: &Universe, grouping: GroupingArg) -> CmdResult<BTreeMap<String, String>> {
    match grouping {
        GroupingArg::Sector => Ok(universe.sector_grouping()),
        GroupingArg::Size => {
            assign_quantiles(universe).map(|q| q.grouping()).map_err(|e: UniverseError| fail(USAGE, e))
        }
    }
}

fn print_flips(output: &StageOutput) {
    let mut by_class: Vec<(String, f64, usize)> = Vec::new();
    for r in output.results.iter().filter(|r| !r.unauditable) {
        let Some(phi) = r.n_flip().and_then(|f| analysis::flip_rate(f, r.n_valid).ok()) else { continue };
        let class = condition_class(&r.condition);
        match by_class.iter_mut().find(|c| c.0 == class) {
            Some(c) => {
                c.1 += phi;
                c.2 += 1;
            }
            None => by_class.push((class, phi, 1)),
        }
    }
    println!("{:<18} {:>10} {:>7}", "condition", "flip rate", "stocks");
    for (class, sum, n) in by_class {
        println!("{class:<18} {:>10.3} {n:>7}", sum / n as f64);
    }
}

async fn verify(cfg: &RunConfig, mode: Mode, grouping: GroupingArg) -> CmdResult {
    let universe = universe(cfg)?;
    let corpus = evidence(cfg)?;
    let gateways = gateways(cfg)?;
    let params = params(cfg);
    let mut log = read_log(cfg)?;
    let groups = grouping_map(&universe, grouping)?;
    let mut unauditable = Vec::new();
    for gateway in &gateways {
        let model = gateway.model_id();
        if log.header(Stage::Elicitation, model).is_none() {
            return Err(fail(
                UPSTREAM,
                anyhow!(
                    "no elicitation results for model {model} in {}; run `bias-probe elicit` first",
                    cfg.log_path().display()
                ),
            ));
        }
        let elicited = log.results();
        let group: PreferredGroup =
            select_group(&groups, &elicited, model, cfg.min_preference).map_err(runner_failure)?;
        println!(
            "model {model}: most-preferred group {} ({}, mean |preference| {:.3}, {} stocks)",
            group.group_key,
            group.direction,
            group.mean_score,
            group.members.len()
        );
        let (stage, output) = match mode {
            Mode::Volume => (
                Stage::Volume,
                runner::run_volume_verification(&universe, &corpus, &group, &cfg.ratios, gateway, &params).await,
            ),
            Mode::Intensity => (
                Stage::Intensity,
                runner::run_intensity_verification(&universe, &corpus, &group, &cfg.deltas, gateway, &params).await,
            ),
        };
        let output = output.map_err(|e| match e {
            RunnerError::Protocol(ProtocolError::VolumeContract { support_n, counter_n }) => {
                fail(USAGE, anyhow!("--ratios entry {support_n}:{counter_n} violates counter > support"))
            }
            other => runner_failure(other),
        })?;
        print_flips(&output);
        unauditable.extend(output.unauditable().into_iter().cloned());
        let mut h = header(cfg, stage, model, &corpus)?;
        h.group = Some(group);
        match mode {
            Mode::Volume => h.ratios = cfg.ratios.clone(),
            Mode::Intensity => h.deltas = cfg.deltas.clone(),
        }
        persist(cfg, &mut log, h, output)?;
    }
    unauditable_check(&unauditable.iter().collect::<Vec<_>>())
}

async fn style(cfg: &RunConfig) -> CmdResult {
    let universe = universe(cfg)?;
    let corpus = evidence(cfg)?;
    let gateways = gateways(cfg)?;
    let params = params(cfg);
    let mut log = read_log(cfg)?;
    let mut unauditable = Vec::new();
    for gateway in &gateways {
        let output = runner::run_style_conflict(&universe, &corpus, gateway, &params).await.map_err(runner_failure)?;
        let (m, c) = output
            .results
            .iter()
            .filter(|r| !r.unauditable)
            .filter_map(|r| r.style_wins())
            .fold((0, 0), |a, w| (a.0 + w.0, a.1 + w.1));
        println!("model {}: momentum {m} wins, contrarian {c} wins", gateway.model_id());
        if let Ok((rm, rc)) = analysis::win_rates(m, c) {
            println!("win rate: momentum {rm:.3}, contrarian {rc:.3}");
        }
        match analysis::chi_square_2x2([[c as u64, m as u64], [m as u64, c as u64]], cfg.yates) {
            Ok(chi) => {
                let p = chi.result.p_value;
                let p = if p < 1e-4 { format!("{p:.2e}") } else { format!("{p:.4}") };
                println!("chi-square {:.4} (df 1), p = {p} {}", chi.result.statistic, chi.result.stars());
                if chi.low_expected {
                    eprintln!("warning: an expected count is below 5; the chi-square approximation is weak");
                }
            }
            Err(e) => eprintln!("warning: chi-square not computed: {e}"),
        }
        unauditable.extend(output.unauditable().into_iter().cloned());
        let header = header(cfg, Stage::Style, gateway.model_id(), &corpus)?;
        persist(cfg, &mut log, header, output)?;
    }
    unauditable_check(&unauditable.iter().collect::<Vec<_>>())
}

fn report(cfg: &RunConfig) -> CmdResult {
    let results_path = cfg.results_path();
    if !results_path.exists() {
        return Err(fail(
            UPSTREAM,
            anyhow!("{} not found; run `bias-probe elicit` (and the other stages) first", results_path.display()),
        ));
    }
    let universe = universe(cfg)?;
    let results: Vec<ConditionResult> =
        runner::read_results(&results_path).map_err(|e| fail(UPSTREAM, e))?.into_iter().map(|row| row.result).collect();
    let log = read_log(cfg)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("run_id".to_string(), cfg.run_id.clone());
    for h in log.headers() {
        let prefix = format!("{}/{}", h.stage, h.model);
        metadata.insert(format!("{prefix}/run_seed"), h.run_seed.to_string());
        metadata.insert(format!("{prefix}/n"), h.n.to_string());
        metadata.insert(format!("{prefix}/config_digest"), h.config_digest.clone());
        metadata.insert(format!("{prefix}/corpus_digest"), h.corpus_digest.clone());
        metadata.insert(format!("{prefix}/universe_digest"), h.universe_digest.clone());
        if let Some(g) = &h.group {
            metadata.insert(format!("{prefix}/group"), format!("{} ({})", g.group_key, g.direction));
        }
    }
    metadata.insert("results_digest".to_string(), file_digest(&results_path)?);
    let bundle = build_report(&results, &universe, metadata, cfg.yates).map_err(runner_failure)?;
    let files = write_report(&bundle, &results, cfg.report_dir()).map_err(|e| fail(UPSTREAM, e))?;
    println!("report written to {}", cfg.report_dir().display());
    for f in files {
        println!("  {f}");
    }
    Ok(())
}

fn file_digest(path: &Path) -> CmdResult<String> {
    let bytes = std::fs::read(path).with_context(|| path.display().to_string()).map_err(|e| fail(UPSTREAM, e))?;
    Ok(seed::digest_hex(&bytes))
}
