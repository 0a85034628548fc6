use crate::aggregation::AggregatedLabel;
use crate::labeling::WeakLabel;

/// Majority vote over the non-abstaining labels of one row.
///
/// Confidence is the majority share of non-abstaining votes. Rows with no
/// votes or an exact tie abstain (`None`).
pub fn majority_vote(row: &[WeakLabel]) -> Option<AggregatedLabel> {
    let pos = row.iter().filter(|&&l| l == WeakLabel::Positive).count();
    let neg = row.iter().filter(|&&l| l == WeakLabel::Negative).count();
    let voted = pos + neg;
    if voted == 0 || pos == neg {
        return None;
    }
    let (positive, majority) = if pos > neg { (true, pos) } else { (false, neg) };
    Some(AggregatedLabel {
        positive,
        confidence: majority as f64 / voted as f64,
    })
}
