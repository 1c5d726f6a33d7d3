//! Table and curve rendering for an audit run.
//!
//! CSV cells carry full precision; Markdown rounds for display only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::analysis::{self, EntropySource};
use crate::protocol::ConditionLabel;
use crate::runner::{write_atomic, ConditionResult, RunnerError, Stage};
use crate::universe::{assign_quantiles, Quantile, Sector, Universe, UniverseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Text(String),
    Number(f64),
    Missing,
}

/// Markdown rounding for a numeric cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precision {
    Two,
    Four,
    PValue,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub value: Value,
    pub precision: Precision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<Flag>,
    /// `ticker|condition` keys of the result records behind the cell.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Self { value: Value::Text(s.into()), precision: Precision::Two, flag: None, sources: Vec::new() }
    }

    pub fn number(x: f64, precision: Precision) -> Self {
        Self { value: Value::Number(x), precision, flag: None, sources: Vec::new() }
    }

    pub fn missing() -> Self {
        Self { value: Value::Missing, precision: Precision::Two, flag: None, sources: Vec::new() }
    }

    fn with_sources(mut self, sources: Vec<String>) -> Self {
        self.sources = sources;
        self
    }

    pub fn as_number(&self) -> Option<f64> {
        match self.value {
            Value::Number(x) => Some(x),
            _ => None,
        }
    }

    fn csv(&self) -> String {
        match &self.value {
            Value::Text(s) => s.clone(),
            Value::Number(x) => format!("{x}"),
            Value::Missing => String::new(),
        }
    }

    fn markdown(&self) -> String {
        let body = match &self.value {
            Value::Text(s) => s.clone(),
            Value::Missing => "n/a".into(),
            Value::Number(x) => match self.precision {
                Precision::Two => format!("{x:.2}"),
                Precision::Four => format!("{x:.4}"),
                Precision::Integer => format!("{x:.0}"),
                Precision::PValue if *x < 1e-4 => "<0.0001".into(),
                Precision::PValue => format!("{x:.4}"),
            },
        };
        match self.flag {
            Some(Flag::High) => format!("**{body}**"),
            Some(Flag::Low) => format!("_{body}_"),
            None => body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.columns.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(self.columns.len())));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::markdown).collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        for note in &self.notes {
            out.push_str(&format!("\n{note}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub name: String,
    pub label: String,
    /// (x, y, stocks behind the point)
    pub points: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub metadata: BTreeMap<String, String>,
    pub tables: Vec<Table>,
    pub curves: Vec<Curve>,
}

impl ReportBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn curves(&self, name: &str) -> Vec<&Curve> {
        self.curves.iter().filter(|c| c.name == name).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Sector,
    Size,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Sector => "sector",
            Grouping::Size => "size",
        }
    }
}

fn models(results: &[ConditionResult]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in results {
        if !out.contains(&r.model) {
            out.push(r.model.clone());
        }
    }
    out
}

fn source_key(r: &ConditionResult) -> String {
    format!("{}|{}", r.ticker, r.condition)
}

/// Column labels and ticker → label map for a grouping, in display order.
pub fn grouping_columns(
    universe: &Universe,
    grouping: Grouping,
) -> Result<(Vec<String>, BTreeMap<String, String>), RunnerError> {
    match grouping {
        Grouping::Sector => {
            let present = universe.sectors();
            let columns = Sector::ALL.iter().filter(|s| present.contains(s)).map(|s| s.label().to_string()).collect();
            Ok((columns, universe.sector_grouping()))
        }
        Grouping::Size => {
            let q = assign_quantiles(universe)?;
            let columns = Quantile::ALL.iter().map(|q| q.label().to_string()).collect();
            Ok((columns, q.grouping()))
        }
    }
}

fn elicitation<'a>(results: &'a [ConditionResult], model: &'a str) -> impl Iterator<Item = &'a ConditionResult> {
    results.iter().filter(move |r| r.model == model && r.stage == Stage::Elicitation && !r.unauditable)
}

fn flag_extremes(cells: &mut [Cell]) {
    let values: Vec<(usize, f64)> = cells.iter().enumerate().filter_map(|(i, c)| Some((i, c.as_number()?))).collect();
    let Some(max) = values.iter().map(|v| v.1).reduce(f64::max) else { return };
    let min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    if min == max {
        return;
    }
    for (i, v) in values {
        if v == max {
            cells[i].flag = Some(Flag::High);
        } else if v == min {
            cells[i].flag = Some(Flag::Low);
        }
    }
}

/// One row per model, one column per group, cell = mean π.
pub fn emit_preference_table(
    results: &[ConditionResult],
    universe: &Universe,
    grouping: Grouping,
) -> Result<Table, RunnerError> {
    let (groups, map) = grouping_columns(universe, grouping)?;
    let mut rows = Vec::new();
    for model in models(results) {
        let mut cells: Vec<Cell> = groups
            .iter()
            .map(|g| {
                let members: Vec<&ConditionResult> =
                    elicitation(results, &model).filter(|r| map.get(&r.ticker) == Some(g)).collect();
                let pis: Vec<f64> = members.iter().filter_map(|r| Some(r.preference()?.pi)).collect();
                if pis.is_empty() {
                    Cell::missing()
                } else {
                    Cell::number(pis.iter().sum::<f64>() / pis.len() as f64, Precision::Two)
                        .with_sources(members.iter().map(|r| source_key(r)).collect())
                }
            })
            .collect();
        if cells.iter().all(|c| c.value == Value::Missing) {
            continue;
        }
        flag_extremes(&mut cells);
        let mut row = vec![Cell::text(model)];
        row.extend(cells);
        rows.push(row);
    }
    let mut columns = vec!["model".to_string()];
    columns.extend(groups);
    Ok(Table {
        name: format!("{}_preference", grouping.as_str()),
        columns,
        rows,
        notes: vec![
            "Cells are mean per-stock preference scores; bold marks the row maximum, italics the minimum.".into()
        ],
    })
}

/// High-vs-low group Welch t-test per (model, grouping).
pub fn emit_ttest_table(results: &[ConditionResult], universe: &Universe) -> Result<Table, RunnerError> {
    let columns =
        ["model", "grouping", "high_group", "high_mean", "low_group", "low_mean", "diff", "t", "df", "p_value", "sig"];
    let mut rows = Vec::new();
    for model in models(results) {
        let scores: BTreeMap<String, f64> =
            elicitation(results, &model).filter_map(|r| Some((r.ticker.clone(), r.preference()?.pi))).collect();
        if scores.is_empty() {
            continue;
        }
        for grouping in [Grouping::Sector, Grouping::Size] {
            let map = match grouping_columns(universe, grouping) {
                Ok((_, map)) => map,
                Err(RunnerError::Universe(UniverseError::TooFewForQuartiles(_))) => continue,
                Err(e) => return Err(e),
            };
            let table = analysis::group_preference_table(&scores, &map)?;
            let high = table.get(&table.high).expect("high group present");
            let low = table.get(&table.low).expect("low group present");
            let mut row = vec![
                Cell::text(model.clone()),
                Cell::text(grouping.as_str()),
                Cell::text(high.group.clone()),
                Cell::number(high.mean_pi, Precision::Two),
                Cell::text(low.group.clone()),
                Cell::number(low.mean_pi, Precision::Two),
            ];
            let a = analysis::group_samples(&scores, &map, &high.group);
            let b = analysis::group_samples(&scores, &map, &low.group);
            match analysis::welch_t_test(&a, &b) {
                Ok(t) => row.extend([
                    Cell::number(t.diff, Precision::Four),
                    Cell::number(t.statistic, Precision::Four),
                    Cell::number(t.df, Precision::Two),
                    Cell::number(t.p_value, Precision::PValue),
                    Cell::text(t.stars()),
                ]),
                Err(e) => {
                    tracing::warn!(%model, grouping = grouping.as_str(), error = %e, "t-test skipped");
                    row.push(Cell::number(high.mean_pi - low.mean_pi, Precision::Four));
                    row.extend([Cell::missing(), Cell::missing(), Cell::missing(), Cell::text("")]);
                }
            }
            rows.push(row);
        }
    }
    Ok(Table {
        name: "ttest".into(),
        columns: columns.iter().map(|s| s.to_string()).collect(),
        rows,
        notes: vec![
            "Welch two-sample t-test on per-stock preference scores of the highest- and lowest-preference groups. \
             * p<0.05, ** p<0.01, *** p<0.001."
                .into(),
        ],
    })
}

/// Momentum vs contrarian wins with a 2×2 chi-square test per model.
pub fn emit_chi_square_table(results: &[ConditionResult], yates: bool) -> Table {
    let columns = [
        "model",
        "momentum_wins",
        "contrarian_wins",
        "momentum_rate",
        "contrarian_rate",
        "diff",
        "chi2",
        "p_value",
        "sig",
        "low_expected",
    ];
    let mut rows = Vec::new();
    let mut notes = vec![format!(
        "Pearson chi-square on [[contrarian wins, momentum wins], [momentum wins, contrarian wins]], df = 1, {}.",
        if yates { "with Yates correction" } else { "no continuity correction" }
    )];
    for model in models(results) {
        let style: Vec<&ConditionResult> =
            results.iter().filter(|r| r.model == model && r.stage == Stage::Style && !r.unauditable).collect();
        if style.is_empty() {
            continue;
        }
        let (m, c) = style.iter().filter_map(|r| r.style_wins()).fold((0, 0), |a, w| (a.0 + w.0, a.1 + w.1));
        let mut row = vec![
            Cell::text(model.clone()),
            Cell::number(m as f64, Precision::Integer).with_sources(style.iter().map(|r| source_key(r)).collect()),
            Cell::number(c as f64, Precision::Integer),
        ];
        match analysis::win_rates(m, c) {
            Ok((rm, rc)) => row.extend([Cell::number(rm, Precision::Two), Cell::number(rc, Precision::Two)]),
            Err(_) => row.extend([Cell::missing(), Cell::missing()]),
        }
        match analysis::chi_square_2x2([[c as u64, m as u64], [m as u64, c as u64]], yates) {
            Ok(chi) => {
                if chi.low_expected {
                    notes.push(format!("{model}: an expected count is below 5; the chi-square approximation is weak."));
                }
                row.extend([
                    Cell::number(chi.result.diff, Precision::Four),
                    Cell::number(chi.result.statistic, Precision::Four),
                    Cell::number(chi.result.p_value, Precision::PValue),
                    Cell::text(chi.result.stars()),
                    Cell::text(chi.low_expected.to_string()),
                ]);
            }
            Err(e) => {
                tracing::warn!(%model, error = %e, "chi-square skipped");
                row.extend([Cell::missing(), Cell::missing(), Cell::missing(), Cell::text(""), Cell::text("")]);
            }
        }
        rows.push(row);
    }
    Table { name: "chi2".into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows, notes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipVariant {
    Volume,
    Intensity,
}

/// Mean flip rate per x value: counter share for volume, Δ for intensity.
pub fn emit_flip_curves(results: &[ConditionResult], variant: FlipVariant) -> Vec<Curve> {
    let stage = match variant {
        FlipVariant::Volume => Stage::Volume,
        FlipVariant::Intensity => Stage::Intensity,
    };
    let mut curves = Vec::new();
    for model in models(results) {
        // x key (as ordered bits) -> (x, sum, n)
        let mut points: Vec<(f64, f64, usize)> = Vec::new();
        for r in results.iter().filter(|r| r.model == model && r.stage == stage && !r.unauditable) {
            let x = match (&r.condition, variant) {
                (ConditionLabel::Volume { .. }, FlipVariant::Volume) => r.condition.counter_share(),
                (ConditionLabel::Intensity { delta_pct, .. }, FlipVariant::Intensity) => Some(*delta_pct),
                _ => None,
            };
            let (Some(x), Some(flips)) = (x, r.n_flip()) else { continue };
            let Ok(phi) = analysis::flip_rate(flips, r.n_valid) else { continue };
            match points.iter_mut().find(|p| p.0 == x) {
                Some(p) => {
                    p.1 += phi;
                    p.2 += 1;
                }
                None => points.push((x, phi, 1)),
            }
        }
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let points = points.into_iter().map(|(x, sum, n)| (x, sum / n as f64, n)).collect();
        curves.push(Curve {
            name: match variant {
                FlipVariant::Volume => "flip_volume".into(),
                FlipVariant::Intensity => "flip_intensity".into(),
            },
            label: model,
            points,
        });
    }
    curves
}

fn curves_csv(curves: &[Curve], x_name: &str) -> String {
    let mut out = format!("model,{x_name},mean_flip_rate,n_stocks\n");
    for c in curves {
        for (x, y, n) in &c.points {
            let _ = writeln!(out, "{},{x},{y},{n}", c.label);
        }
    }
    out
}

/// Per-model mean entropy for every condition class present.
pub fn emit_entropy_comparison(results: &[ConditionResult]) -> (Table, Vec<Curve>) {
    let rows_by_model: Vec<(String, Vec<analysis::EntropyRow>)> = models(results)
        .into_iter()
        .map(|m| {
            let rows =
                analysis::entropy_summary(results, |r| r.model == m && r.stage != Stage::Style).unwrap_or_else(|e| {
                    tracing::warn!(model = %m, error = %e, "entropy comparison is partial");
                    Vec::new()
                });
            (m, rows)
        })
        .collect();
    let mut classes: Vec<String> = Vec::new();
    for (_, rows) in &rows_by_model {
        for r in rows {
            if !classes.contains(&r.condition) {
                classes.push(r.condition.clone());
            }
        }
    }
    let mut table_rows = Vec::new();
    let mut curves = Vec::new();
    let mut notes = Vec::new();
    for (model, rows) in &rows_by_model {
        if rows.is_empty() {
            notes.push(format!("{model}: no probability data; entropy omitted."));
            continue;
        }
        let mut row = vec![Cell::text(model.clone())];
        let mut sources: Vec<EntropySource> = Vec::new();
        for class in &classes {
            match rows.iter().find(|r| &r.condition == class) {
                Some(r) => {
                    row.push(Cell::number(r.mean_bits, Precision::Two));
                    if !sources.contains(&r.source) {
                        sources.push(r.source);
                    }
                }
                None => row.push(Cell::missing()),
            }
        }
        let source = match sources.as_slice() {
            [single] => single.as_str(),
            _ => EntropySource::Mixed.as_str(),
        };
        row.push(Cell::text(source));
        table_rows.push(row);
        curves.push(Curve {
            name: "entropy".into(),
            label: model.clone(),
            points: rows.iter().enumerate().map(|(i, r)| (i as f64, r.mean_bits, r.n_stocks)).collect(),
        });
    }
    if table_rows.iter().any(|r| r.iter().any(|c| c.value == Value::Missing)) {
        notes.push("Missing cells: the condition was not run for that model.".into());
    }
    let mut columns = vec!["model".to_string()];
    columns.extend(classes);
    columns.push("source".into());
    (Table { name: "entropy".into(), columns, rows: table_rows, notes }, curves)
}

fn entropy_csv(results: &[ConditionResult]) -> String {
    let mut out = String::from("model,condition,mean_entropy_bits,n_stocks,source\n");
    for m in models(results) {
        if let Ok(rows) = analysis::entropy_summary(results, |r| r.model == m && r.stage != Stage::Style) {
            for r in rows {
                let _ =
                    writeln!(out, "{},{},{},{},{}", r.model, r.condition, r.mean_bits, r.n_stocks, r.source.as_str());
            }
        }
    }
    out
}

pub fn build_report(
    results: &[ConditionResult],
    universe: &Universe,
    metadata: BTreeMap<String, String>,
    yates: bool,
) -> Result<ReportBundle, RunnerError> {
    let mut tables = vec![
        emit_preference_table(results, universe, Grouping::Sector)?,
        emit_preference_table(results, universe, Grouping::Size).or_else(|e| match e {
            RunnerError::Universe(UniverseError::TooFewForQuartiles(_)) => Ok(Table {
                name: "size_preference".into(),
                columns: vec!["model".into()],
                rows: Vec::new(),
                notes: vec![format!("Size table omitted: {e}.")],
            }),
            other => Err(other),
        })?,
        emit_ttest_table(results, universe)?,
        emit_chi_square_table(results, yates),
    ];
    let (entropy, entropy_curves) = emit_entropy_comparison(results);
    tables.push(entropy);
    let mut curves = emit_flip_curves(results, FlipVariant::Volume);
    curves.extend(emit_flip_curves(results, FlipVariant::Intensity));
    curves.extend(entropy_curves);
    Ok(ReportBundle { metadata, tables, curves })
}

/// Writes the bundle's files into `dir`. Output depends only on the inputs.
pub fn write_report(
    bundle: &ReportBundle,
    results: &[ConditionResult],
    dir: impl AsRef<Path>,
) -> Result<Vec<String>, RunnerError> {
    let dir = dir.as_ref();
    let mut files: Vec<(String, String)> = Vec::new();
    for name in ["sector_preference", "size_preference", "ttest", "chi2"] {
        let table = bundle.table(name).expect("table built");
        files.push((format!("{name}.csv"), table.to_csv()));
        files.push((format!("{name}.md"), table.to_markdown()));
    }
    let volume: Vec<Curve> = bundle.curves("flip_volume").into_iter().cloned().collect();
    let intensity: Vec<Curve> = bundle.curves("flip_intensity").into_iter().cloned().collect();
    files.push(("flip_volume.csv".into(), curves_csv(&volume, "counter_share")));
    files.push(("flip_intensity.csv".into(), curves_csv(&intensity, "delta_pct")));
    files.push(("entropy.csv".into(), entropy_csv(results)));
    files.push(("entropy.md".into(), bundle.table("entropy").expect("table built").to_markdown()));

    let names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    let manifest = serde_json::json!({
        "metadata": bundle.metadata,
        "files": names,
    });
    files.push(("manifest.json".into(), serde_json::to_string_pretty(&manifest).expect("manifest") + "\n"));

    for (name, body) in &files {
        write_atomic(&dir.join(name), body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Direction;
    use crate::universe::{parse_universe, Stock};

    fn universe_all_sectors() -> Universe {
        let stocks = Sector::ALL
            .iter()
            .enumerate()
            .map(|(i, s)| Stock {
                ticker: format!("T{i:02}"),
                name: format!("Company {i}"),
                sector: *s,
                market_cap: 1000.0 - i as f64,
            })
            .collect();
        Universe::new(stocks, "mem").unwrap()
    }

    fn elicit(model: &str, ticker: &str, n_buy: u32, n_sell: u32) -> ConditionResult {
        ConditionResult {
            model: model.into(),
            stage: Stage::Elicitation,
            ticker: ticker.into(),
            condition: ConditionLabel::Balanced { k_per_side: 2 },
            n_valid: n_buy + n_sell,
            n_buy,
            n_sell,
            n_invalid: 0,
            mean_p_buy: None,
            unauditable: false,
        }
    }

    #[test]
    fn uniform_scores_have_no_flags_and_full_columns() {
        let u = universe_all_sectors();
        let results: Vec<_> = u.stocks().iter().map(|s| elicit("m", &s.ticker, 10, 0)).collect();
        let t = emit_preference_table(&results, &u, Grouping::Sector).unwrap();
        assert_eq!(t.columns.len(), 12);
        assert!(t.rows[0][1..].iter().all(|c| c.as_number() == Some(1.0) && c.flag.is_none()));
        assert_eq!(t.rows[0][1].sources, vec!["T00|balanced(k=2)".to_string()]);
    }

    #[test]
    fn extremes_are_flagged() {
        let csv = "ticker,name,sector,market_cap\nA,A Co,Energy,10\nB,B Co,Utilities,5\n";
        let u = parse_universe(csv.as_bytes(), "mem").unwrap();
        // 0.2 = (6-4)/10, 0.8 = (9-1)/10
        let results = vec![elicit("m", "A", 6, 4), elicit("m", "B", 9, 1)];
        let t = emit_preference_table(&results, &u, Grouping::Sector).unwrap();
        assert_eq!(t.columns, vec!["model", "Energy", "Utilities"]);
        assert_eq!(t.rows[0][1].flag, Some(Flag::Low));
        assert_eq!(t.rows[0][2].flag, Some(Flag::High));
        let md = t.to_markdown();
        assert!(md.contains("| m | _0.20_ | **0.80** |"), "{md}");
        assert!(t.to_csv().starts_with("model,Energy,Utilities\nm,0.2,0.8\n"));
    }

    fn style(model: &str, ticker: &str, side: Direction, n_buy: u32, n_sell: u32) -> ConditionResult {
        ConditionResult {
            stage: Stage::Style,
            condition: ConditionLabel::Style { momentum_side: side },
            ..elicit(model, ticker, n_buy, n_sell)
        }
    }

    #[test]
    fn chi_square_layouts() {
        // always buy: each view wins when it holds buy
        let even = vec![style("a", "X", Direction::Buy, 5, 0), style("a", "X", Direction::Sell, 5, 0)];
        let t = emit_chi_square_table(&even, false);
        assert_eq!(t.rows[0][1].as_number(), Some(5.0));
        assert_eq!(t.rows[0][6].as_number(), Some(0.0));

        let contrarian = vec![style("b", "X", Direction::Buy, 0, 5), style("b", "X", Direction::Sell, 5, 0)];
        let t = emit_chi_square_table(&contrarian, false);
        assert_eq!(t.rows[0][2].as_number(), Some(10.0));
        assert_eq!(t.rows[0][8], Cell::text("***"));
        let md = t.to_markdown();
        assert!(md.contains("| b | 0 | 10 | 0.00 | 1.00 | 1.0000 | 20.0000 | <0.0001 | *** | false |"), "{md}");

        let none = vec![elicit("c", "X", 1, 0)];
        assert!(emit_chi_square_table(&none, false).rows.is_empty());
    }

    #[test]
    fn flip_curves_average_over_stocks() {
        let v = |t: &str, s, c, n_buy, n_sell| ConditionResult {
            stage: Stage::Volume,
            condition: ConditionLabel::Volume { preferred: Direction::Buy, support_n: s, counter_n: c },
            ..elicit("m", t, n_buy, n_sell)
        };
        let results = vec![v("A", 0, 3, 0, 10), v("B", 0, 3, 2, 8), v("A", 2, 3, 10, 0), v("B", 2, 3, 10, 0)];
        let curves = emit_flip_curves(&results, FlipVariant::Volume);
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].points, vec![(0.6, 0.0, 2), (1.0, 0.9, 2)]);
        assert_eq!(
            curves_csv(&curves, "counter_share"),
            "model,counter_share,mean_flip_rate,n_stocks\nm,0.6,0,2\nm,1,0.9,2\n"
        );
    }

    #[test]
    fn entropy_table_side_by_side() {
        let mut a = elicit("m", "A", 5, 5);
        a.mean_p_buy = Some(0.5);
        let mut b = ConditionResult {
            stage: Stage::Volume,
            condition: ConditionLabel::Volume { preferred: Direction::Buy, support_n: 0, counter_n: 3 },
            ..elicit("m", "A", 10, 0)
        };
        b.mean_p_buy = Some(1.0);
        let (t, curves) = emit_entropy_comparison(&[a, b]);
        assert_eq!(t.columns, vec!["model", "balanced", "volume(0|3)", "source"]);
        assert_eq!(t.rows[0][1].as_number(), Some(1.0));
        assert_eq!(t.rows[0][2].as_number(), Some(0.0));
        assert_eq!(t.rows[0][3], Cell::text("logprob"));
        assert_eq!(curves[0].points.len(), 2);
    }

    #[test]
    fn report_files_are_byte_stable() {
        let u = universe_all_sectors();
        let results: Vec<_> = u
            .stocks()
            .iter()
            .enumerate()
            .map(|(i, s)| elicit("m", &s.ticker, 5 + (i as u32 % 6), 5 - (i as u32 % 6).min(5)))
            .collect();
        let results: Vec<_> = results.into_iter().filter(|r| r.n_buy + r.n_sell == r.n_valid).collect();
        let dir = tempfile::tempdir().unwrap();
        let meta: BTreeMap<String, String> = [("run_seed".to_string(), "1".to_string())].into();
        let bundle = build_report(&results, &u, meta.clone(), false).unwrap();
        let files = write_report(&bundle, &results, dir.path().join("a")).unwrap();
        let bundle2 = build_report(&results, &u, meta, false).unwrap();
        write_report(&bundle2, &results, dir.path().join("b")).unwrap();
        assert_eq!(files.len(), 13);
        for f in files {
            assert_eq!(
                std::fs::read(dir.path().join("a").join(&f)).unwrap(),
                std::fs::read(dir.path().join("b").join(&f)).unwrap(),
                "{f}"
            );
        }
    }
}
