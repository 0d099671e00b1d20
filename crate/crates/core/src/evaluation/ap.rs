//! All-point average precision with a monotone precision envelope.

use super::matching::MatchResult;

/// AP of a ranked true/false-positive sequence against `num_gt` ground truths.
///
/// Each true positive raises recall by `1 / num_gt`; the area it adds is that
/// step times the best precision reached at this rank or any later one.
/// Returns 0 when there are no detections or no ground truth.
pub fn average_precision_from_labels(labels: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || labels.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(labels.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in labels.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // envelope: running max from the tail
    let mut running = 0.0f64;
    for p in precision.iter_mut().rev() {
        running = running.max(*p);
        *p = running;
    }
    let area: f64 = labels
        .iter()
        .zip(&precision)
        .filter(|(&is_tp, _)| is_tp)
        .map(|(_, &p)| p)
        .sum();
    area / num_gt as f64
}

pub fn average_precision(matched: &MatchResult, num_gt: usize) -> f64 {
    average_precision_from_labels(&matched.labels(), num_gt)
}
