use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationError, AnnotationLabel};
use crate::statlab::{Hundredths, IssueLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionAgreement {
    pub matches: u64,
    pub percent: Hundredths,
    /// Cohen's kappa; `None` when chance agreement is already total.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub record_id: String,
    /// (over_praise, over_inference) from the first rater.
    pub first: (bool, bool),
    pub second: (bool, bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: u64,
    pub over_praise: DimensionAgreement,
    pub over_inference: DimensionAgreement,
    /// Both codes match.
    pub overall: DimensionAgreement,
    pub disagreements: Vec<Disagreement>,
}

/// An empty overlap agrees vacuously.
fn percent(matches: u64, n: u64) -> Hundredths {
    if n == 0 {
        Hundredths(10_000)
    } else {
        Hundredths::percent(matches, n)
    }
}

fn kappa(pairs: &[(bool, bool)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return None;
    }
    let observed = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let pa = pairs.iter().filter(|(a, _)| *a).count() as f64 / n;
    let pb = pairs.iter().filter(|(_, b)| *b).count() as f64 / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - chance).abs() < 1e-12 {
        return None;
    }
    Some((observed - chance) / (1.0 - chance))
}

fn dimension(pairs: &[(bool, bool)]) -> DimensionAgreement {
    let matches = pairs.iter().filter(|(a, b)| a == b).count() as u64;
    DimensionAgreement { matches, percent: percent(matches, pairs.len() as u64), kappa: kappa(pairs) }
}

fn by_id(labels: &[AnnotationLabel]) -> Result<BTreeMap<&str, &AnnotationLabel>, AnnotationError> {
    let mut map = BTreeMap::new();
    for l in labels {
        if map.insert(l.record_id.as_str(), l).is_some() {
            return Err(AnnotationError::Duplicate(l.record_id.clone()));
        }
    }
    Ok(map)
}

fn pair_up<'a>(
    a: &'a [AnnotationLabel],
    b: &'a [AnnotationLabel],
) -> Result<Vec<(&'a AnnotationLabel, &'a AnnotationLabel)>, AnnotationError> {
    let (ma, mb) = (by_id(a)?, by_id(b)?);
    let (ka, kb): (BTreeSet<&str>, BTreeSet<&str>) = (ma.keys().copied().collect(), mb.keys().copied().collect());
    if ka != kb {
        return Err(AnnotationError::CoverageMismatch {
            only_a: ka.difference(&kb).map(|s| s.to_string()).collect(),
            only_b: kb.difference(&ka).map(|s| s.to_string()).collect(),
        });
    }
    Ok(ma.into_iter().map(|(id, la)| (la, mb[id])).collect())
}

/// Percent agreement per code and overall, with the ids to discuss.
pub fn agreement(a: &[AnnotationLabel], b: &[AnnotationLabel]) -> Result<Agreement, AnnotationError> {
    let pairs = pair_up(a, b)?;
    let op: Vec<_> = pairs.iter().map(|(x, y)| (x.over_praise, y.over_praise)).collect();
    let oi: Vec<_> = pairs.iter().map(|(x, y)| (x.over_inference, y.over_inference)).collect();
    let codes = |l: &AnnotationLabel| (l.over_praise, l.over_inference);
    let disagreements: Vec<Disagreement> = pairs
        .iter()
        .filter(|(x, y)| codes(x) != codes(y))
        .map(|(x, y)| Disagreement { record_id: x.record_id.clone(), first: codes(x), second: codes(y) })
        .collect();
    let n = pairs.len() as u64;
    let both = n - disagreements.len() as u64;
    Ok(Agreement {
        n,
        over_praise: dimension(&op),
        over_inference: dimension(&oi),
        overall: DimensionAgreement { matches: both, percent: percent(both, n), kappa: None },
        disagreements,
    })
}

/// The codes agreed on in discussion for one disagreeing record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub record_id: String,
    pub over_praise: bool,
    pub over_inference: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Agreed,
    Adjudicated,
    SingleRater,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedLabel {
    pub record_id: String,
    pub over_praise: bool,
    pub over_inference: bool,
    pub provenance: Provenance,
    pub raters: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl IssueLabel for ConsolidatedLabel {
    fn over_praise(&self) -> bool {
        self.over_praise
    }
    fn over_inference(&self) -> bool {
        self.over_inference
    }
}

/// Agreed labels plus one adjudication per disagreement, sorted by id.
pub fn resolve(
    a: &[AnnotationLabel],
    b: &[AnnotationLabel],
    decisions: &[Adjudication],
) -> Result<Vec<ConsolidatedLabel>, AnnotationError> {
    let pairs = pair_up(a, b)?;
    let mut decided: BTreeMap<&str, &Adjudication> = BTreeMap::new();
    for d in decisions {
        if decided.insert(d.record_id.as_str(), d).is_some() {
            return Err(AnnotationError::Duplicate(d.record_id.clone()));
        }
    }
    let codes = |l: &AnnotationLabel| (l.over_praise, l.over_inference);
    let disputed: BTreeSet<&str> =
        pairs.iter().filter(|(x, y)| codes(x) != codes(y)).map(|(x, _)| x.record_id.as_str()).collect();
    if let Some(stray) = decided.keys().find(|id| !disputed.contains(*id)) {
        return Err(AnnotationError::NotDisagreement(stray.to_string()));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        let raters = vec![x.rater_id.clone(), y.rater_id.clone()];
        let agreed = codes(x) == codes(y);
        let id = x.record_id.as_str();
        let label = match (agreed, decided.remove(id)) {
            (true, Some(_)) => return Err(AnnotationError::NotDisagreement(id.to_string())),
            (false, None) => return Err(AnnotationError::MissingDecision(id.to_string())),
            (true, None) => ConsolidatedLabel {
                record_id: id.to_string(),
                over_praise: x.over_praise,
                over_inference: x.over_inference,
                provenance: Provenance::Agreed,
                raters,
                note: x.note.clone(),
            },
            (false, Some(d)) => ConsolidatedLabel {
                record_id: id.to_string(),
                over_praise: d.over_praise,
                over_inference: d.over_inference,
                provenance: Provenance::Adjudicated,
                raters,
                note: d.note.clone(),
            },
        };
        out.push(label);
    }
    Ok(out)
}

/// Adds single-rater labels for the records outside the overlap.
pub fn merge_remainder(
    consolidated: &[ConsolidatedLabel],
    remainder: &[AnnotationLabel],
) -> Result<Vec<ConsolidatedLabel>, AnnotationError> {
    let mut merged: BTreeMap<String, ConsolidatedLabel> = BTreeMap::new();
    for c in consolidated {
        if merged.insert(c.record_id.clone(), c.clone()).is_some() {
            return Err(AnnotationError::Duplicate(c.record_id.clone()));
        }
    }
    for l in remainder {
        let label = ConsolidatedLabel {
            record_id: l.record_id.clone(),
            over_praise: l.over_praise,
            over_inference: l.over_inference,
            provenance: Provenance::SingleRater,
            raters: vec![l.rater_id.clone()],
            note: l.note.clone(),
        };
        if merged.insert(l.record_id.clone(), label).is_some() {
            return Err(AnnotationError::Duplicate(l.record_id.clone()));
        }
    }
    Ok(merged.into_values().collect())
}
