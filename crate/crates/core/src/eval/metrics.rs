use serde::{Deserialize, Serialize};

use crate::annotation::GroundTruthSegmentation;
use crate::error::{Error, Result};

/// Transitions this close below a frame's timestamp still count as reached,
/// so boundaries computed by different float paths land on the same frame.
const FRAME_TIME_SLACK_S: f64 = 1e-9;

/// 1-based task index for every frame of a video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabeling(pub Vec<u32>);

impl FrameLabeling {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.0
    }

    fn max_label(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Labelling of a ground-truth segmentation.
    pub fn from_truth(truth: &GroundTruthSegmentation) -> Result<Self> {
        to_frame_labels(&truth.transitions(), truth.duration_s, truth.fps, truth.segments.len())
    }
}

/// Frame `f` gets task `1 + #{T_j <= f / fps}`; the video has
/// `round(duration * fps)` frames.
pub fn to_frame_labels(transitions: &[f64], duration_s: f64, fps: f64, n_tasks: usize) -> Result<FrameLabeling> {
    if n_tasks == 0 {
        return Err(Error::Validation("need at least one task".into()));
    }
    if transitions.len() != n_tasks - 1 {
        return Err(Error::Arity {
            what: "transitions",
            expected: n_tasks - 1,
            got: transitions.len(),
        });
    }
    if !(fps > 0.0 && duration_s > 0.0) {
        return Err(Error::Validation(format!("bad fps {fps} or duration {duration_s}")));
    }
    for (i, t) in transitions.iter().enumerate() {
        if !(0.0..=duration_s).contains(t) {
            return Err(Error::Validation(format!("transition {i} at {t} s is outside [0, {duration_s}]")));
        }
        if i > 0 && *t < transitions[i - 1] {
            return Err(Error::Validation(format!("transition {i} at {t} s precedes its predecessor")));
        }
    }
    let frames = ((duration_s * fps).round() as usize).max(1);
    let mut next = 0;
    let labels = (0..frames)
        .map(|f| {
            let t = f as f64 / fps + FRAME_TIME_SLACK_S;
            while next < transitions.len() && transitions[next] <= t {
                next += 1;
            }
            next as u32 + 1
        })
        .collect();
    Ok(FrameLabeling(labels))
}

fn check_arity(pred: &FrameLabeling, truth: &FrameLabeling) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Arity {
            what: "predicted frame labels",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Per-task frame counts: (in both, predicted, true).
fn counts(pred: &FrameLabeling, truth: &FrameLabeling) -> Vec<(usize, usize, usize)> {
    let k = pred.max_label().max(truth.max_label()) as usize;
    let mut c = vec![(0, 0, 0); k + 1];
    for (&p, &t) in pred.0.iter().zip(&truth.0) {
        c[p as usize].1 += 1;
        c[t as usize].2 += 1;
        if p == t {
            c[p as usize].0 += 1;
        }
    }
    c
}

fn mean_percent(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut k) = (0.0, 0usize);
    for v in values {
        sum += v;
        k += 1;
    }
    if k == 0 {
        0.0
    } else {
        100.0 * sum / k as f64
    }
}

/// Percentage of frames with the right task.
pub fn mof(pred: &FrameLabeling, truth: &FrameLabeling) -> Result<f64> {
    check_arity(pred, truth)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.0.iter().zip(&truth.0).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// Mean per-task intersection over union; tasks absent from both sides are skipped.
pub fn iou(pred: &FrameLabeling, truth: &FrameLabeling) -> Result<f64> {
    check_arity(pred, truth)?;
    Ok(mean_percent(counts(pred, truth).into_iter().skip(1).filter_map(
        |(both, p, t)| {
            let union = p + t - both;
            (union > 0).then(|| both as f64 / union as f64)
        },
    )))
}

/// Mean per-task F1 over the tasks present in `truth`.
pub fn f1(pred: &FrameLabeling, truth: &FrameLabeling) -> Result<f64> {
    check_arity(pred, truth)?;
    Ok(mean_percent(counts(pred, truth).into_iter().skip(1).filter_map(
        |(both, p, t)| {
            (t > 0).then(|| {
                let precision = if p == 0 { 0.0 } else { both as f64 / p as f64 };
                let recall = both as f64 / t as f64;
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
        },
    )))
}

/// MoF, IoU and F1 of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
}

pub fn score(pred: &FrameLabeling, truth: &FrameLabeling) -> Result<Scores> {
    Ok(Scores {
        mof: mof(pred, truth)?,
        iou: iou(pred, truth)?,
        f1: f1(pred, truth)?,
    })
}

/// Scores predicted transitions against a ground-truth segmentation.
pub fn score_transitions(transitions: &[f64], truth: &GroundTruthSegmentation) -> Result<Scores> {
    let pred = to_frame_labels(transitions, truth.duration_s, truth.fps, truth.segments.len())?;
    score(&pred, &FrameLabeling::from_truth(truth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fl(v: &[u32]) -> FrameLabeling {
        FrameLabeling(v.to_vec())
    }

    #[test]
    fn labels_from_transitions() {
        assert_eq!(to_frame_labels(&[5.0], 10.0, 1.0, 2).unwrap().0, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert_eq!(to_frame_labels(&[], 3.0, 1.0, 1).unwrap().0, vec![1, 1, 1]);
        assert_eq!(to_frame_labels(&[0.0], 3.0, 1.0, 2).unwrap().0, vec![2, 2, 2]);
    }

    #[test]
    fn bad_transitions_rejected() {
        assert!(to_frame_labels(&[11.0], 10.0, 1.0, 2).is_err());
        assert!(to_frame_labels(&[-1.0], 10.0, 1.0, 2).is_err());
        assert!(to_frame_labels(&[5.0, 4.0], 10.0, 1.0, 3).is_err());
        assert!(to_frame_labels(&[5.0], 10.0, 1.0, 3).is_err());
    }

    #[test]
    fn spot_values() {
        let (p, t) = (fl(&[1, 1, 2, 2]), fl(&[1, 2, 2, 2]));
        assert_eq!(mof(&p, &t).unwrap(), 75.0);
        assert!((iou(&p, &t).unwrap() - 58.333).abs() < 0.01);
        assert!((f1(&p, &t).unwrap() - 73.333).abs() < 0.01);
    }

    #[test]
    fn identical_and_disjoint() {
        let a = fl(&[1, 1, 2, 3]);
        assert_eq!(score(&a, &a).unwrap(), Scores { mof: 100.0, iou: 100.0, f1: 100.0 });
        let (p, t) = (fl(&[2, 2]), fl(&[1, 1]));
        assert_eq!(mof(&p, &t).unwrap(), 0.0);
        assert_eq!(iou(&p, &t).unwrap(), 0.0);
        assert_eq!(f1(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn task_missing_from_prediction_scores_zero_f1() {
        let (p, t) = (fl(&[1, 1, 1, 1]), fl(&[1, 1, 2, 2]));
        let f = f1(&p, &t).unwrap();
        assert!((f - 100.0 * (2.0 / 3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn arity_mismatch() {
        assert!(mof(&fl(&[1]), &fl(&[1, 1])).is_err());
        assert!(iou(&fl(&[1]), &fl(&[1, 1])).is_err());
        assert!(f1(&fl(&[1]), &fl(&[1, 1])).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_perfect_iff_equal(
            t in prop::collection::vec(1u32..5, 1..60),
            p in prop::collection::vec(1u32..5, 1..60),
        ) {
            let n = t.len().min(p.len());
            let (p, t) = (fl(&p[..n]), fl(&t[..n]));
            let s = score(&p, &t).unwrap();
            for v in [s.mof, s.iou, s.f1] {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert_eq!(s.mof == 100.0, p == t);
            prop_assert_eq!(s.iou == 100.0, p == t);
        }

        #[test]
        fn labels_non_decreasing_and_complete(
            mut cuts in prop::collection::vec(0.0f64..50.0, 0..6),
            fps in 1.0f64..30.0,
        ) {
            cuts.sort_by(f64::total_cmp);
            let l = to_frame_labels(&cuts, 50.0, fps, cuts.len() + 1).unwrap();
            prop_assert_eq!(l.len(), (50.0 * fps).round() as usize);
            prop_assert!(l.0.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(l.0.iter().all(|&x| x >= 1 && x as usize <= cuts.len() + 1));
        }
    }
}
