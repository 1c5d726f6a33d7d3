//! Stock universe ingestion, size quantiles and most-preferred group selection.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::Direction;

pub const CSV_HEADER: [&str; 4] = ["ticker", "name", "sector", "market_cap"];

#[derive(Debug, thiserror::Error)]
pub enum UniverseError {
    #[error("cannot read universe {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed universe CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("universe is empty")]
    Empty,
    #[error("need at least 4 stocks to form quartiles, got {0}")]
    TooFewForQuartiles(usize),
    #[error("grouping is empty")]
    EmptyGrouping,
    #[error("ticker {0} has no signed preference score")]
    MissingScore(String),
}

/// Closed sector taxonomy; anything else is rejected at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sector {
    BasicMaterials,
    CommunicationServices,
    ConsumerCyclical,
    ConsumerDefensive,
    Energy,
    FinancialServices,
    Healthcare,
    Industrials,
    RealEstate,
    Technology,
    Utilities,
}

impl Sector {
    pub const ALL: [Sector; 11] = [
        Sector::BasicMaterials,
        Sector::CommunicationServices,
        Sector::ConsumerCyclical,
        Sector::ConsumerDefensive,
        Sector::Energy,
        Sector::FinancialServices,
        Sector::Healthcare,
        Sector::Industrials,
        Sector::RealEstate,
        Sector::Technology,
        Sector::Utilities,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Sector::BasicMaterials => "Basic Materials",
            Sector::CommunicationServices => "Communication Services",
            Sector::ConsumerCyclical => "Consumer Cyclical",
            Sector::ConsumerDefensive => "Consumer Defensive",
            Sector::Energy => "Energy",
            Sector::FinancialServices => "Financial Services",
            Sector::Healthcare => "Healthcare",
            Sector::Industrials => "Industrials",
            Sector::RealEstate => "Real Estate",
            Sector::Technology => "Technology",
            Sector::Utilities => "Utilities",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        Sector::ALL
            .into_iter()
            .find(|sector| sector.label() == trimmed)
            .ok_or_else(|| format!("unknown sector label {trimmed:?}"))
    }
}

impl TryFrom<String> for Sector {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Sector> for String {
    fn from(sector: Sector) -> Self {
        sector.label().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stock {
    pub ticker: String,
    pub name: String,
    pub sector: Sector,
    /// USD.
    pub market_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    stocks: Vec<Stock>,
    source_path: PathBuf,
}

impl Universe {
    pub fn new(stocks: Vec<Stock>, source_path: impl Into<PathBuf>) -> Result<Self, UniverseError> {
        if stocks.is_empty() {
            return Err(UniverseError::Empty);
        }
        let mut seen = HashSet::new();
        for stock in &stocks {
            if stock.ticker.trim().is_empty() {
                return Err(UniverseError::Schema("missing ticker".into()));
            }
            if !seen.insert(stock.ticker.as_str()) {
                return Err(UniverseError::Schema(format!("duplicate ticker {}", stock.ticker)));
            }
            if !(stock.market_cap.is_finite() && stock.market_cap > 0.0) {
                return Err(UniverseError::Validation(format!(
                    "market_cap for {} must be positive, got {}",
                    stock.ticker, stock.market_cap
                )));
            }
        }
        Ok(Self { stocks, source_path: source_path.into() })
    }

    pub fn stocks(&self) -> &[Stock] {
        &self.stocks
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.stocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stocks.is_empty()
    }

    pub fn get(&self, ticker: &str) -> Option<&Stock> {
        self.stocks.iter().find(|s| s.ticker == ticker)
    }

    /// ticker -> sector label.
    pub fn sector_grouping(&self) -> BTreeMap<String, String> {
        self.stocks.iter().map(|s| (s.ticker.clone(), s.sector.label().to_string())).collect()
    }

    /// Sectors present in the universe, in taxonomy order.
    pub fn sectors(&self) -> Vec<Sector> {
        Sector::ALL.into_iter().filter(|sector| self.stocks.iter().any(|s| s.sector == *sector)).collect()
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    ticker: String,
    name: String,
    sector: String,
    market_cap: String,
}

/// Reads a `ticker,name,sector,market_cap` CSV. Row order is preserved.
pub fn load_universe(path: impl AsRef<Path>) -> Result<Universe, UniverseError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| UniverseError::Io { path: path.to_path_buf(), source })?;
    parse_universe(&bytes, path)
}

pub fn parse_universe(bytes: &[u8], source_path: impl Into<PathBuf>) -> Result<Universe, UniverseError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(UniverseError::Schema(format!(
            "header must be exactly `{}`, got `{}`",
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut stocks = Vec::new();
    let mut unknown_sectors = Vec::new();
    for (line, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let sector = match row.sector.parse::<Sector>() {
            Ok(sector) => sector,
            Err(_) => {
                unknown_sectors.push(format!("{} ({:?})", row.ticker, row.sector));
                continue;
            }
        };
        let market_cap = row.market_cap.parse::<f64>().map_err(|_| {
            UniverseError::Schema(format!("row {}: market_cap {:?} is not a decimal number", line + 2, row.market_cap))
        })?;
        stocks.push(Stock { ticker: row.ticker, name: row.name, sector, market_cap });
    }
    if !unknown_sectors.is_empty() {
        return Err(UniverseError::Validation(format!("unknown sector label for {}", unknown_sectors.join(", "))));
    }
    Universe::new(stocks, source_path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantile {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quantile {
    pub const ALL: [Quantile; 4] = [Quantile::Q1, Quantile::Q2, Quantile::Q3, Quantile::Q4];

    pub fn label(self) -> &'static str {
        match self {
            Quantile::Q1 => "Q1",
            Quantile::Q2 => "Q2",
            Quantile::Q3 => "Q3",
            Quantile::Q4 => "Q4",
        }
    }
}

impl fmt::Display for Quantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Market-cap quartile per ticker. Q1 holds the largest caps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantileAssignment {
    labels: BTreeMap<String, Quantile>,
}

impl QuantileAssignment {
    pub fn get(&self, ticker: &str) -> Option<Quantile> {
        self.labels.get(ticker).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Quantile)> {
        self.labels.iter().map(|(t, q)| (t.as_str(), *q))
    }

    pub fn bucket_sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for q in self.labels.values() {
            sizes[*q as usize] += 1;
        }
        sizes
    }

    /// ticker -> quantile label.
    pub fn grouping(&self) -> BTreeMap<String, String> {
        self.labels.iter().map(|(t, q)| (t.clone(), q.label().to_string())).collect()
    }
}

/// Sorts by market cap descending (ties by ticker ascending) and cuts four
/// contiguous buckets; the remainder goes to the earliest buckets.
pub fn assign_quantiles(universe: &Universe) -> Result<QuantileAssignment, UniverseError> {
    let n = universe.len();
    if n < 4 {
        return Err(UniverseError::TooFewForQuartiles(n));
    }
    let mut ranked: Vec<&Stock> = universe.stocks().iter().collect();
    ranked.sort_by(|a, b| b.market_cap.total_cmp(&a.market_cap).then_with(|| a.ticker.cmp(&b.ticker)));

    let base = n / 4;
    let extra = n % 4;
    let mut labels = BTreeMap::new();
    let mut cursor = 0;
    for (i, quantile) in Quantile::ALL.into_iter().enumerate() {
        let size = base + usize::from(i < extra);
        for stock in &ranked[cursor..cursor + size] {
            labels.insert(stock.ticker.clone(), quantile);
        }
        cursor += size;
    }
    Ok(QuantileAssignment { labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferredGroup {
    pub group_key: String,
    pub direction: Direction,
    /// Mean of the members' |signed preference|.
    pub mean_score: f64,
    pub members: Vec<String>,
}

/// Picks the group with the largest mean |signed score|. Ties go to the
/// lexicographically smallest label; a zero mean signed score means buy.
pub fn most_preferred_group(
    grouping: &BTreeMap<String, String>,
    signed_scores: &BTreeMap<String, f64>,
) -> Result<PreferredGroup, UniverseError> {
    if grouping.is_empty() {
        return Err(UniverseError::EmptyGrouping);
    }
    let mut groups: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for (ticker, label) in grouping {
        let score = *signed_scores.get(ticker).ok_or_else(|| UniverseError::MissingScore(ticker.clone()))?;
        groups.entry(label).or_default().push((ticker, score));
    }

    let mut best: Option<PreferredGroup> = None;
    for (label, members) in groups {
        let n = members.len() as f64;
        let mean_abs = members.iter().map(|(_, s)| s.abs()).sum::<f64>() / n;
        let mean_signed = members.iter().map(|(_, s)| s).sum::<f64>() / n;
        if best.as_ref().is_none_or(|b| mean_abs > b.mean_score) {
            best = Some(PreferredGroup {
                group_key: label.to_string(),
                direction: Direction::from_signed(mean_signed),
                mean_score: mean_abs,
                members: members.iter().map(|(t, _)| t.to_string()).collect(),
            });
        }
    }
    Ok(best.expect("non-empty grouping yields a group"))
}
