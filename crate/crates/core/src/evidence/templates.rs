//! Offline template bank for synthetic evidence.
//!
//! Each skeleton places its price-direction word right next to the `{pct}%`
//! slot, so the framing validator reads the intended direction. Contrarian
//! skeletons always contain the word "contrarian"; momentum skeletons never do.

use rand::Rng;

use super::EvidenceKind;
use crate::action::Direction;

pub(crate) fn skeletons(direction: Direction, kind: EvidenceKind) -> &'static [&'static str] {
    match (kind, direction) {
        (EvidenceKind::Qualitative, Direction::Buy) => QUALITATIVE_BUY,
        (EvidenceKind::Qualitative, Direction::Sell) => QUALITATIVE_SELL,
        (EvidenceKind::Quantitative, Direction::Buy) => QUANTITATIVE_BUY,
        (EvidenceKind::Quantitative, Direction::Sell) => QUANTITATIVE_SELL,
        (EvidenceKind::Momentum, Direction::Buy) => MOMENTUM_BUY,
        (EvidenceKind::Momentum, Direction::Sell) => MOMENTUM_SELL,
        (EvidenceKind::Contrarian, Direction::Buy) => CONTRARIAN_BUY,
        (EvidenceKind::Contrarian, Direction::Sell) => CONTRARIAN_SELL,
    }
}

const QUALITATIVE_BUY: &[&str] = &[
    "Internal sources indicate that {name} is preparing to launch {product}, a new enterprise offering that has been piloted with several large customers for {period}; long-term contracts tied to the launch could drive a {pct}% increase in the stock price.",
    "A confidential memo describes a strategic partnership between {name} and {partner} to expand distribution in {region}, a move expected to lift recurring revenue and support a {pct}% rise in the share price over the next six months.",
    "{name} has quietly completed a restructuring of its supply chain around the {product} platform, and management expects the resulting cost savings to be recognized by the market as a {pct}% gain in the stock.",
    "Channel conversations suggest that demand for the {product} line in {region} is running well ahead of plan, which could prompt an upward guidance revision and a {pct}% increase in {ticker} shares.",
    "{name} is reported to have secured a multi-year agreement with {partner}, giving it a durable revenue stream that analysts believe could justify a {pct}% climb in the stock price.",
    "A newly appointed operations chief at {name} has launched an efficiency program built around {product}, and early results point to margin improvement that may produce a {pct}% price increase.",
    "Regulators in {region} are expected to approve the pending application from {name} for the {product} service, opening a new market that could trigger a {pct}% rally in {ticker}.",
    "{name} is said to be close to winning a flagship contract with {partner}, and a successful award could reset the growth outlook and lead to a {pct}% upside move in the share price.",
];

const QUALITATIVE_SELL: &[&str] = &[
    "Internal sources indicate that the launch of the {product} platform at {name} has slipped by {period} after quality problems surfaced in customer pilots, a delay that could cause a {pct}% decrease in the stock price.",
    "A confidential memo suggests that {partner} intends to end its distribution agreement with {name} in {region}, a loss of recurring revenue that could result in a {pct}% decline in the share price.",
    "{name} is facing an unexpected regulatory review of its {product} business in {region}, and the uncertainty surrounding the outcome may lead to a {pct}% drop in {ticker} shares.",
    "Channel conversations point to weakening demand for the {product} line in {region}, raising the risk of a guidance cut and a {pct}% fall in the stock price.",
    "Several senior engineers on the {product} program have reportedly left {name} for a competitor, a talent loss that could slow the roadmap and drive a {pct}% price decrease.",
    "A key supplier to {name} has signaled it will raise component prices for {period}, pressuring margins on the {product} line and potentially producing a {pct}% decline in the stock.",
    "{name} is reported to have lost a competitive bid with {partner}, removing an expected source of growth and exposing the stock to a {pct}% downside move.",
    "An internal audit at {name} has flagged integration problems at a recently acquired {product} unit, and the resulting write-down risk could push the share price {pct}% lower.",
];

const QUANTITATIVE_BUY: &[&str] = &[
    "Gross margin on the {product} segment of {name} expanded to {num_hi}% last quarter from {num_lo}% a year earlier; applying the current price-to-earnings multiple of {mult}x to the larger earnings base implies a {pct}% increase in the stock price.",
    "Based on forward estimates, {ticker} trades at {mult}x earnings against a peer average of {mult_hi}x; a re-rating toward the peer multiple would imply a {pct}% rise in the share price.",
    "Free cash flow at {name} grew {num_hi}% year over year while capital expenditure was flat; our discounted cash flow model puts intrinsic value {pct}% above the current price.",
    "Operating expenses as a share of revenue shrank by {bps} basis points over {period} at {name}, and the resulting margin expansion translates into a {pct}% gain in our price target.",
    "{name} repurchased shares worth {num_lo}% of its float over the past year while earnings per share expanded {num_hi}%; sustaining that pace supports a {pct}% appreciation in the stock.",
    "Market share for the {product} line of {name} in {region} went from {num_lo}% to {num_hi}% in {period}, and our revenue model links that share gain to a {pct}% increase in the share price.",
    "Return on equity at {name} improved to {num_hi}% against a sector median of {num_lo}%, and closing half of the valuation gap to peers would lift the stock by {pct}%.",
    "The debt-to-equity ratio of {name} went from {ratio_hi} to {ratio_lo} after refinancing, saving {bps} basis points of revenue in annual interest costs and supporting {pct}% upside in the share price.",
];

const QUANTITATIVE_SELL: &[&str] = &[
    "Gross margin on the {product} segment of {name} contracted to {num_lo}% last quarter from {num_hi}% a year earlier; applying the current price-to-earnings multiple of {mult}x to the smaller earnings base implies a {pct}% decrease in the stock price.",
    "Gross merchandise volume growth for {name} in {region} slowed to {num_lo}% from a prior four-quarter average of {num_hi}%; a price-to-sales multiple of {mult}x on the revised revenue guidance points to a {pct}% decline in the share price.",
    "Sales and marketing spending at {name} increased by {bps} basis points of revenue over {period} without matching customer growth; our discounted cash flow model shows a {pct}% reduction in intrinsic value per share.",
    "The hedge book at {name} covers only {num_lo}% of projected volumes against a peer average of {num_hi}%, and the added earnings volatility justifies a valuation discount that leads to a {pct}% drop in our price target.",
    "Inventory days at {name} went from {days_lo} to {days_hi} over {period}, tying up working capital and shrinking free cash flow by {num_lo}%, which our model converts into a {pct}% fall in the share price.",
    "{ticker} trades at {mult}x forward earnings, a premium of {num_lo}% to its peer group, while its earnings growth forecast was revised by minus {bps} basis points; normalizing the multiple implies the stock is {pct}% below fair value.",
    "Interest coverage at {name} weakened from {ratio_hi}x to {ratio_lo}x over {period} as debt costs reset, and our revised discount rate implies a {pct}% reduction in the price target.",
    "Operating margin in the core {product} division of {name} is expected to contract by {bps} basis points from pricing pressure, an earnings impact that at {mult}x forward earnings implies a fair value {pct}% below the current price.",
];

const MOMENTUM_BUY: &[&str] = &[
    "{name} has broken above its 50-day moving average on heavy trading volume, signaling strong positive momentum that is expected to carry the stock a further {pct}% higher as trend-following funds add to positions.",
    "{ticker} has posted successively stronger weekly closes for {weeks} consecutive weeks on expanding volume, and the persistence of this uptrend suggests another {pct}% gain in the coming month.",
    "Institutional inflows into {name} have accelerated for {period}, and price momentum models point to a continuation of the trend worth a {pct}% increase in the share price.",
    "{name} just set a new 52-week high following strong earnings revisions, and momentum strategies that buy recent winners expect a further {pct}% rise.",
    "The relative strength of {ticker} versus the broad market has improved for {weeks} straight weeks, a momentum signal that historically precedes a {pct}% advance in the stock.",
    "Short sellers in {name} are being squeezed as the stock trends upward, and the accelerating momentum could extend the move by another {pct}% to the upside.",
    "Analyst estimate revisions for {name} have turned sharply positive and the share price is following through, so trend followers anticipate a {pct}% climb from current levels.",
    "A golden cross for {name}, with the 50-day average moving through the 200-day average from below, confirms the uptrend and supports a momentum-driven {pct}% increase in the price.",
];

const MOMENTUM_SELL: &[&str] = &[
    "{name} has broken below its critical 50-day moving average amidst high trading volume, indicating strong negative momentum that is expected to push the stock down a further {pct}% as trend-following funds extend their short positions.",
    "{ticker} has posted successively weaker weekly closes for {weeks} consecutive weeks on expanding volume, and the persistence of this downtrend suggests another {pct}% decline in the coming month.",
    "Institutional outflows from {name} have accelerated for {period}, and price momentum models point to a continuation of the trend worth a {pct}% decrease in the share price.",
    "{name} just set a new 52-week low following weak earnings revisions, and momentum strategies that sell recent losers expect a further {pct}% drop.",
    "The relative strength of {ticker} versus the broad market has deteriorated for {weeks} straight weeks, a momentum signal that historically precedes a {pct}% slide in the stock.",
    "A death cross for {name}, with the 50-day average moving through the 200-day average from above, confirms the downtrend and points to a momentum-driven {pct}% decline in the price.",
    "Analyst estimate revisions for {name} have turned sharply negative and the share price is following through, so trend followers anticipate a {pct}% fall from current levels.",
    "Selling pressure in {name} has intensified as the stock trends downward, and the accelerating momentum could extend the move by another {pct}% to the downside.",
];

const CONTRARIAN_BUY: &[&str] = &[
    "The recent sharp selloff has pushed the relative strength index of {name} into deeply oversold territory, signaling that pessimism is overextended and creating a contrarian opportunity for a {pct}% relief rally.",
    "{ticker} now trades at a {num_lo}% discount to its five-year average valuation after a prolonged selloff, and a contrarian reading of mean reversion points to a {pct}% rebound in the share price.",
    "Sentiment toward {name} has reached an extreme with short interest at a multi-year peak, a contrarian signal that the selling is exhausted and a {pct}% recovery rally is likely.",
    "Insiders at {name} have been buying shares into the downturn, and contrarian investors read this as evidence that the stock is undervalued, with {pct}% upside toward fair value.",
    "Shares of {name} have lagged the sector by a wide margin this year, but from a contrarian, value-oriented view the discount is excessive and should close with a {pct}% gain.",
    "After {weeks} consecutive weeks of losses, {ticker} is trading near book value, and contrarian buyers expect mean reversion to lift the stock by {pct}% as the overreaction fades.",
    "Analyst downgrades of {name} have piled up far beyond what fundamentals warrant, and a contrarian stance anticipates a {pct}% rebound once expectations reset.",
    "The dividend yield on {ticker} has expanded to a decade peak after the selloff, which contrarian value investors see as a mispricing likely to resolve through a {pct}% rise in the share price.",
];

const CONTRARIAN_SELL: &[&str] = &[
    "The recent sharp run-up has pushed the relative strength index of {name} into deeply overbought territory, signaling that optimism is overextended and creating a contrarian case for a {pct}% pullback.",
    "{ticker} now trades at a {num_lo}% premium to its five-year average valuation after a prolonged run-up, and a contrarian reading of mean reversion points to a {pct}% decline in the share price.",
    "Sentiment toward {name} has reached an extreme of optimism with almost no short interest, a contrarian signal that buying is exhausted and a {pct}% correction is likely.",
    "Insiders at {name} have been selling shares into the strength, and contrarian investors read this as evidence that the stock is overvalued, with {pct}% downside toward fair value.",
    "Shares of {name} have outrun the sector by a wide margin this year, and from a contrarian, value-oriented view the premium is excessive and should close with a {pct}% drop.",
    "After {weeks} consecutive weeks of advances, {ticker} is trading at a record multiple of book value, and contrarian sellers expect mean reversion to pull the stock {pct}% lower as the euphoria fades.",
    "Analyst upgrades of {name} have piled up far beyond what fundamentals warrant, and a contrarian stance anticipates a {pct}% retreat once expectations reset.",
    "The dividend yield on {ticker} has compressed to a decade trough after the run-up, which contrarian value investors see as a mispricing likely to resolve through a {pct}% decrease in the share price.",
];

const PRODUCTS: &[&str] = &[
    "Atlas Cloud",
    "Northwind Edge",
    "Helix Analytics",
    "Meridian Pay",
    "Vector Logistics",
    "Keystone Care",
    "Solstice Grid",
    "Cobalt Fleet",
];

const PARTNERS: &[&str] = &[
    "a top-five global logistics operator",
    "a large regional bank",
    "a national telecom carrier",
    "a leading consumer electronics maker",
    "a major hospital network",
    "a multinational retailer",
];

const REGIONS: &[&str] =
    &["Southeast Asia", "the Nordics", "Latin America", "Central Europe", "the Gulf region", "Western Canada"];

const PERIODS: &[&str] = &["two quarters", "three quarters", "the past year", "the last six months"];

fn one_decimal(rng: &mut impl Rng, lo: u32, hi: u32) -> String {
    let tenths = rng.random_range(lo * 10..=hi * 10);
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Fills every slot of a skeleton. Numbers are drawn with one decimal so
/// they never collide with a whole-percent intensity figure.
pub(crate) fn fill(skeleton: &str, ticker: &str, name: &str, pct: &str, rng: &mut impl Rng) -> String {
    let num_lo = one_decimal(rng, 11, 24);
    let num_hi = one_decimal(rng, 26, 44);
    let mult = one_decimal(rng, 9, 20);
    let mult_hi = one_decimal(rng, 21, 32);
    let ratio_hi = one_decimal(rng, 2, 3);
    let ratio_lo = one_decimal(rng, 0, 1);
    let bps = (rng.random_range(6..=30) * 10).to_string();
    let weeks = rng.random_range(3..=9).to_string();
    let days_lo = rng.random_range(45..=65).to_string();
    let days_hi = rng.random_range(70..=95).to_string();
    let product = PRODUCTS[rng.random_range(0..PRODUCTS.len())];
    let partner = PARTNERS[rng.random_range(0..PARTNERS.len())];
    let region = REGIONS[rng.random_range(0..REGIONS.len())];
    let period = PERIODS[rng.random_range(0..PERIODS.len())];

    skeleton
        .replace("{name}", name)
        .replace("{ticker}", ticker)
        .replace("{pct}", pct)
        .replace("{num_lo}", &num_lo)
        .replace("{num_hi}", &num_hi)
        .replace("{mult_hi}", &mult_hi)
        .replace("{mult}", &mult)
        .replace("{ratio_hi}", &ratio_hi)
        .replace("{ratio_lo}", &ratio_lo)
        .replace("{bps}", &bps)
        .replace("{weeks}", &weeks)
        .replace("{days_lo}", &days_lo)
        .replace("{days_hi}", &days_hi)
        .replace("{product}", product)
        .replace("{partner}", partner)
        .replace("{region}", region)
        .replace("{period}", period)
}
