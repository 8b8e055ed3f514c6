//! Counts, percentages and Pearson chi-square on 2x2 tables.
//!
//! Percentages are kept as exact integer hundredths so that rounding is
//! half-up and reproducible; they are always derived from a count and a
//! total, never stored on their own.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatError {
    #[error("total n must be positive")]
    EmptyTotal,
    #[error("{dimension} count {count} exceeds total {n}")]
    CountExceedsTotal { dimension: &'static str, count: u64, n: u64 },
    #[error(
        "chi-square is undefined: {0} marginal total is zero (an exact test would be needed, which is out of scope)"
    )]
    ZeroMarginal(&'static str),
    #[error("chi-square statistic must be a non-negative number, got {0}")]
    InvalidStatistic(f64),
}

/// A signed fixed-point value in hundredths (two decimal places).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hundredths(pub i64);

impl Hundredths {
    /// `100 * count / n` rounded half-up to two decimals.
    pub fn percent(count: u64, n: u64) -> Self {
        assert!(n > 0, "percent of an empty total");
        // round(10000 * count / n) with ties away from zero, in integers
        let num = 20_000u128 * count as u128 + n as u128;
        Self((num / (2 * n as u128)) as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Hundredths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Hundredths {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Hundredths {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Self((v * 100.0).round() as i64))
    }
}

/// Rounds a non-negative value half-up to `decimals` places.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale + 0.5).floor() / scale
}

/// Formats a statistic the way the comparison table prints it.
pub fn format_statistic(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

/// Formats a p-value to three decimals; anything below 0.0005 prints as `0.000`.
pub fn format_p(p: f64) -> String {
    if p < 0.0005 {
        "0.000".to_string()
    } else {
        format!("{:.3}", round_half_up(p, 3))
    }
}

/// Implemented by anything that carries the two binary issue codes.
pub trait IssueLabel {
    fn over_praise(&self) -> bool;
    fn over_inference(&self) -> bool;
}

impl IssueLabel for (bool, bool) {
    fn over_praise(&self) -> bool {
        self.0
    }
    fn over_inference(&self) -> bool {
        self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    OverPraise,
    OverInference,
    Both,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Self::OverPraise, Self::OverInference, Self::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OverPraise => "over_praise",
            Self::OverInference => "over_inference",
            Self::Both => "both",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Self::OverPraise => "Over praise",
            Self::OverInference => "Over inference",
            Self::Both => "Over praise and over inference",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Issue counts for one system over `n` feedback items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueRates {
    n: u64,
    over_praise: u64,
    over_inference: u64,
    both: u64,
}

impl IssueRates {
    pub fn new(n: u64, over_praise: u64, over_inference: u64, both: u64) -> Result<Self, StatError> {
        if n == 0 {
            return Err(StatError::EmptyTotal);
        }
        for (dimension, count) in [("over_praise", over_praise), ("over_inference", over_inference), ("both", both)] {
            if count > n {
                return Err(StatError::CountExceedsTotal { dimension, count, n });
            }
        }
        Ok(Self { n, over_praise, over_inference, both })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, dim: Dimension) -> u64 {
        match dim {
            Dimension::OverPraise => self.over_praise,
            Dimension::OverInference => self.over_inference,
            Dimension::Both => self.both,
        }
    }

    pub fn percent(&self, dim: Dimension) -> Hundredths {
        Hundredths::percent(self.count(dim), self.n)
    }

    /// `count/percent`, e.g. `37/15.42`.
    pub fn cell(&self, dim: Dimension) -> String {
        format!("{}/{}", self.count(dim), self.percent(dim))
    }
}

#[derive(Serialize, Deserialize)]
struct RateCell {
    count: u64,
    #[serde(default, skip_deserializing)]
    percent: Option<Hundredths>,
}

#[derive(Serialize, Deserialize)]
struct RatesRepr {
    n: u64,
    over_praise: RateCell,
    over_inference: RateCell,
    both: RateCell,
}

impl Serialize for IssueRates {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let cell = |dim| RateCell { count: self.count(dim), percent: Some(self.percent(dim)) };
        RatesRepr {
            n: self.n,
            over_praise: cell(Dimension::OverPraise),
            over_inference: cell(Dimension::OverInference),
            both: cell(Dimension::Both),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IssueRates {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = RatesRepr::deserialize(d)?;
        IssueRates::new(repr.n, repr.over_praise.count, repr.over_inference.count, repr.both.count)
            .map_err(serde::de::Error::custom)
    }
}

/// Counts issue labels over a run of `n` feedback items.
pub fn tally<'a, L, I>(labels: I, n: u64) -> Result<IssueRates, StatError>
where
    L: IssueLabel + 'a,
    I: IntoIterator<Item = &'a L>,
{
    if n == 0 {
        return Err(StatError::EmptyTotal);
    }
    let (mut op, mut oi, mut both) = (0, 0, 0);
    for label in labels {
        let (p, i) = (label.over_praise(), label.over_inference());
        op += p as u64;
        oi += i as u64;
        both += (p && i) as u64;
    }
    IssueRates::new(n, op, oi, both)
}

/// Row 1 = first system (issue yes, issue no); row 2 = second system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Pearson chi-square without continuity correction:
/// `n (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))`, at full precision.
pub fn chi_square(t: &ContingencyTable2x2) -> Result<f64, StatError> {
    let (a, b, c, d) = (t.a as u128, t.b as u128, t.c as u128, t.d as u128);
    let n = a + b + c + d;
    if n == 0 {
        return Err(StatError::EmptyTotal);
    }
    for (name, total) in
        [("first row", a + b), ("second row", c + d), ("first column", a + c), ("second column", b + d)]
    {
        if total == 0 {
            return Err(StatError::ZeroMarginal(name));
        }
    }
    let cross = (a * d).abs_diff(b * c) as f64;
    let denom = ((a + b) * (c + d)) as f64 * ((a + c) * (b + d)) as f64;
    Ok(n as f64 * cross * cross / denom)
}

/// Right-tail probability of the chi-square distribution with one degree
/// of freedom: `erfc(sqrt(x / 2))`.
pub fn p_value(statistic: f64) -> Result<f64, StatError> {
    if statistic.is_nan() || statistic < 0.0 {
        return Err(StatError::InvalidStatistic(statistic));
    }
    Ok(statrs::function::erf::erfc((statistic / 2.0).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dimension: Dimension,
    pub table: ContingencyTable2x2,
    pub statistic: f64,
    pub p_value: f64,
    /// First-system percent minus second-system percent, in points.
    pub delta: Hundredths,
    /// Neither system has a case in this column, so the statistic was set
    /// to 0 and the p-value to 1 rather than computed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub single: IssueRates,
    pub multi: IssueRates,
    pub dimensions: Vec<DimensionResult>,
}

impl Comparison {
    pub fn dimension(&self, dim: Dimension) -> &DimensionResult {
        self.dimensions.iter().find(|r| r.dimension == dim).expect("comparison holds every dimension")
    }
}

/// Builds the three issue-yes/issue-no tables (single vs multi) and tests each.
pub fn compare_runs(single: &IssueRates, multi: &IssueRates) -> Result<Comparison, StatError> {
    compare(single, multi, false)
}

/// Like [`compare_runs`], but a column that is zero in both systems (equal
/// proportions, `ad - bc = 0`) gets statistic 0 and p-value 1 and is
/// marked `degenerate` instead of failing.
pub fn compare_runs_or_zero(single: &IssueRates, multi: &IssueRates) -> Comparison {
    compare(single, multi, true).expect("only zero marginals can fail and they are allowed")
}

fn compare(single: &IssueRates, multi: &IssueRates, allow_zero: bool) -> Result<Comparison, StatError> {
    let mut dimensions = Vec::with_capacity(3);
    for dim in Dimension::ALL {
        let (a, c) = (single.count(dim), multi.count(dim));
        let table = ContingencyTable2x2::new(a, single.n() - a, c, multi.n() - c);
        let delta = Hundredths(single.percent(dim).0 - multi.percent(dim).0);
        let (statistic, p, degenerate) = match chi_square(&table) {
            Ok(x) => (x, p_value(x)?, false),
            Err(StatError::ZeroMarginal(_)) if allow_zero => (0.0, 1.0, true),
            Err(e) => return Err(e),
        };
        dimensions.push(DimensionResult { dimension: dim, table, statistic, p_value: p, delta, degenerate });
    }
    Ok(Comparison { single: *single, multi: *multi, dimensions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Adaptive Simpson integration of the df=1 chi-square density over
    /// [x, x + 120]; the tail beyond that is below 1e-26.
    fn tail_by_quadrature(x: f64) -> f64 {
        fn density(t: f64) -> f64 {
            (-t / 2.0).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
        }
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
        }
        fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = (a + b) / 2.0;
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * eps {
                return l + r + (l + r - whole) / 15.0;
            }
            adapt(f, a, m, l, eps / 2.0, depth - 1) + adapt(f, m, b, r, eps / 2.0, depth - 1)
        }
        // geometric panels keep the steep part near x well resolved
        let mut total = 0.0;
        let mut lo = x;
        let mut width = 0.01_f64.max(x * 0.01);
        while lo < x + 120.0 {
            let hi = (lo + width).min(x + 120.0);
            total += adapt(&density, lo, hi, simpson(&density, lo, hi), 1e-16, 40);
            lo = hi;
            width *= 1.5;
        }
        total
    }

    /// Values from mpmath quad of the df=1 density at 40 digits, frozen.
    #[allow(clippy::excessive_precision)]
    const FROZEN_TAIL: &[(f64, f64)] = &[
        (0.1, 0.75182963404584927583),
        (0.5, 0.47950012218695346232),
        (1.0, 0.31731050786291410283),
        (2.0, 0.15729920705028513066),
        (5.0, 0.025347318677468263932),
        (10.0, 0.0015654022580025496775),
        (20.0, 7.7442164310440836377e-6),
        (31.0, 2.5802843041604251871e-8),
        (40.0, 2.5396285894708649707e-10),
    ];

    fn grid() -> Vec<f64> {
        let mut g = vec![0.1, 0.5];
        g.extend((1..=40).map(f64::from));
        g
    }

    #[test]
    fn quadrature_oracle_agrees_with_frozen_values() {
        for &(x, expected) in FROZEN_TAIL {
            let got = tail_by_quadrature(x);
            assert!((got - expected).abs() < 1e-11, "x={x}: {got} vs {expected}");
        }
    }

    #[test]
    fn p_value_matches_quadrature_on_grid() {
        for x in grid() {
            let oracle = tail_by_quadrature(x);
            let p = p_value(x).unwrap();
            assert!((p - oracle).abs() < 1e-9, "x={x}: {p} vs {oracle}");
        }
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(p_value(0.0).unwrap(), 1.0);
        assert!((p_value(3.8415).unwrap() - 0.05).abs() < 0.0005);
        let p = p_value(31.527).unwrap();
        assert!(p < 0.001);
        assert_eq!(format_p(p), "0.000");
        assert!(matches!(p_value(-1.0), Err(StatError::InvalidStatistic(_))));
        assert!(p_value(f64::NAN).is_err());
    }

    #[test]
    fn p_value_strictly_decreasing_on_grid() {
        let ps: Vec<f64> = grid().into_iter().map(|x| p_value(x).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn chi_square_reproduces_published_statistics() {
        let cases = [((37, 203, 3, 237), 31.527), ((68, 172, 17, 223), 37.185), ((23, 217, 2, 238), 18.609)];
        for ((a, b, c, d), expected) in cases {
            let x = chi_square(&ContingencyTable2x2::new(a, b, c, d)).unwrap();
            assert!((x - expected).abs() <= 0.0005, "{x} vs {expected}");
            assert_eq!(format_statistic(x), format!("{expected:.3}"));
        }
    }

    #[test]
    fn chi_square_identical_proportions_is_zero() {
        assert_eq!(chi_square(&ContingencyTable2x2::new(10, 90, 10, 90)).unwrap(), 0.0);
    }

    #[test]
    fn chi_square_zero_marginal_errors() {
        let err = chi_square(&ContingencyTable2x2::new(0, 240, 0, 240)).unwrap_err();
        assert!(matches!(err, StatError::ZeroMarginal("first column")));
        assert!(err.to_string().contains("exact test"));
        assert_eq!(chi_square(&ContingencyTable2x2::new(0, 0, 0, 0)), Err(StatError::EmptyTotal));
    }

    #[test]
    fn percent_rounding_half_up() {
        assert_eq!(Hundredths::percent(37, 240).to_string(), "15.42");
        assert_eq!(Hundredths::percent(3, 240).to_string(), "1.25");
        assert_eq!(Hundredths::percent(17, 240).to_string(), "7.08");
        assert_eq!(Hundredths::percent(23, 240).to_string(), "9.58");
        assert_eq!(Hundredths::percent(2, 240).to_string(), "0.83");
        assert_eq!(Hundredths::percent(68, 240).to_string(), "28.33");
        // exact tie: 1/8 = 12.5% -> 12.50; 1/16000 = 0.00625% -> 0.01
        assert_eq!(Hundredths::percent(1, 16000).to_string(), "0.01");
        assert_eq!(Hundredths(-875).to_string(), "-8.75");
        assert_eq!(Hundredths(5).to_string(), "0.05");
    }

    #[test]
    fn tally_examples() {
        let mut labels = vec![(false, false); 240];
        for l in labels.iter_mut().take(37) {
            l.0 = true;
        }
        for l in labels.iter_mut().skip(100).take(17) {
            l.1 = true;
        }
        let rates = tally(&labels, 240).unwrap();
        assert_eq!(rates.cell(Dimension::OverPraise), "37/15.42");
        assert_eq!(rates.cell(Dimension::OverInference), "17/7.08");
        assert_eq!(rates.cell(Dimension::Both), "0/0.00");

        let none = tally(&vec![(false, false); 10], 10).unwrap();
        for dim in Dimension::ALL {
            assert_eq!(none.cell(dim), "0/0.00");
        }
        assert_eq!(tally::<(bool, bool), _>(&[], 0), Err(StatError::EmptyTotal));
    }

    #[test]
    fn compare_runs_on_published_counts() {
        let single = IssueRates::new(240, 37, 68, 23).unwrap();
        let multi = IssueRates::new(240, 3, 17, 2).unwrap();
        let cmp = compare_runs(&single, &multi).unwrap();
        assert_eq!(cmp.dimension(Dimension::OverPraise).delta.to_string(), "14.17");
        assert_eq!(cmp.dimension(Dimension::OverInference).delta.to_string(), "21.25");
        assert_eq!(cmp.dimension(Dimension::Both).delta.to_string(), "8.75");
        assert_eq!(cmp.dimension(Dimension::OverPraise).table, ContingencyTable2x2::new(37, 203, 3, 237));
    }

    #[test]
    fn compare_identical_rates() {
        let r = IssueRates::new(100, 10, 20, 5).unwrap();
        let cmp = compare_runs(&r, &r).unwrap();
        for d in &cmp.dimensions {
            assert_eq!(d.statistic, 0.0);
            assert_eq!(d.delta, Hundredths(0));
            assert_eq!(d.p_value, 1.0);
        }
    }

    #[test]
    fn empty_columns_fail_strictly_but_zero_leniently() {
        let r = IssueRates::new(50, 0, 4, 0).unwrap();
        assert!(matches!(compare_runs(&r, &r), Err(StatError::ZeroMarginal(_))));
        let cmp = compare_runs_or_zero(&r, &r);
        let praise = cmp.dimension(Dimension::OverPraise);
        assert!(praise.degenerate);
        assert_eq!((praise.statistic, praise.p_value), (0.0, 1.0));
        assert!(!cmp.dimension(Dimension::OverInference).degenerate);
    }

    #[test]
    fn rates_serialize_with_derived_percent_and_ignore_it_on_read() {
        let r = IssueRates::new(240, 68, 17, 2).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"percent\":28.33"), "{json}");
        let tampered = json.replace("28.33", "27.2");
        let back: IssueRates = serde_json::from_str(&tampered).unwrap();
        assert_eq!(back.percent(Dimension::OverPraise).to_string(), "28.33");
    }

    proptest! {
        #[test]
        fn chi_square_symmetric_under_row_and_column_swap(
            a in 0u64..500, b in 0u64..500, c in 0u64..500, d in 0u64..500
        ) {
            let t = ContingencyTable2x2::new(a, b, c, d);
            if let Ok(x) = chi_square(&t) {
                let rows = chi_square(&ContingencyTable2x2::new(c, d, a, b)).unwrap();
                let cols = chi_square(&ContingencyTable2x2::new(b, a, d, c)).unwrap();
                prop_assert!((x - rows).abs() <= 1e-9 * x.max(1.0));
                prop_assert!((x - cols).abs() <= 1e-9 * x.max(1.0));
            }
        }

        #[test]
        fn chi_square_scales_linearly(
            a in 0u64..300, b in 0u64..300, c in 0u64..300, d in 0u64..300, k in 1u64..50
        ) {
            let t = ContingencyTable2x2::new(a, b, c, d);
            if let Ok(x) = chi_square(&t) {
                let scaled = chi_square(&ContingencyTable2x2::new(a * k, b * k, c * k, d * k)).unwrap();
                prop_assert!((scaled - k as f64 * x).abs() <= 1e-9 * scaled.max(1.0));
            }
        }

        #[test]
        fn p_value_is_monotone(x in 0.0f64..60.0, dx in 1e-3f64..5.0) {
            prop_assert!(p_value(x + dx).unwrap() < p_value(x).unwrap());
        }

        #[test]
        fn percents_rederive_from_counts(n in 1u64..2000, frac in 0.0f64..=1.0) {
            let count = (n as f64 * frac).floor() as u64;
            let r = IssueRates::new(n, count, 0, 0).unwrap();
            let exact = 100.0 * count as f64 / n as f64;
            prop_assert!((r.percent(Dimension::OverPraise).as_f64() - exact).abs() <= 0.005 + 1e-12);
        }
    }
}
