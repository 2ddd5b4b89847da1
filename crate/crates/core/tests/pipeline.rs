use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpivot_core::eval::score_transitions;
use tpivot_core::grid::{GridShape, GridSpec, PromptStyle};
use tpivot_core::search::uniform_baseline;
use tpivot_core::synth::{random_truth, SynthParams, SyntheticVideo};
use tpivot_core::{localize, LocalizationRecord, LocalizeOptions, OracleBackend, SearchParams, TaskSequence};

fn params() -> SearchParams {
    let grid = GridSpec::fit(GridShape::new(4, 4), PromptStyle::Original, 128, (8, 6)).unwrap();
    SearchParams::new(grid)
}

fn synth(seed: u64) -> tpivot_core::GroundTruthSegmentation {
    let p = SynthParams { fps: 4.0, ..SynthParams::default() };
    random_truth(&mut ChaCha8Rng::seed_from_u64(seed), "t", &p).unwrap()
}

fn run(truth: &tpivot_core::GroundTruthSegmentation, workers: usize) -> LocalizationRecord {
    let video = SyntheticVideo::from_truth(truth, (8, 6));
    let tasks = TaskSequence::new(truth.labels()).unwrap();
    let oracle = OracleBackend::exact(truth.clone());
    let opts = LocalizeOptions { workers, ..Default::default() };
    localize(&video, &truth.video_id, &tasks, &params(), &oracle, &opts).unwrap()
}

#[test]
fn oracle_pipeline_beats_baseline() {
    let truth = synth(3);
    let rec = run(&truth, 2);
    assert!(!rec.any_failed());
    assert_eq!(rec.transitions.len(), truth.segments.len() - 1);
    let ours = score_transitions(&rec.transitions, &truth).unwrap();
    let base = score_transitions(&uniform_baseline(truth.duration_s, truth.segments.len()), &truth).unwrap();
    assert!(ours.mof >= base.mof, "{} < {}", ours.mof, base.mof);
    assert!(ours.mof > 95.0, "{}", ours.mof);
}

#[test]
fn record_round_trips_through_disk() {
    let truth = synth(5);
    let rec = run(&truth, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    rec.save(&path).unwrap();
    let back = LocalizationRecord::load(&path).unwrap();
    assert_eq!(back.to_json().unwrap(), rec.to_json().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn records_are_well_formed(seed in any::<u64>()) {
        let truth = synth(seed);
        let rec = run(&truth, 1);
        let d = rec.duration_s;
        prop_assert!(rec.transitions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(rec.transitions.iter().all(|&t| (0.0..=d).contains(&t)));
        prop_assert_eq!(rec.segments.first().unwrap().start_s, 0.0);
        prop_assert_eq!(rec.segments.last().unwrap().end_s, d);
        for b in &rec.boundaries {
            prop_assert!(b.start.trace.len() <= params().passes() as usize);
        }
    }

    #[test]
    fn worker_count_does_not_change_results(seed in any::<u64>()) {
        let truth = synth(seed);
        prop_assert_eq!(run(&truth, 1).to_json().unwrap(), run(&truth, 4).to_json().unwrap());
    }
}
