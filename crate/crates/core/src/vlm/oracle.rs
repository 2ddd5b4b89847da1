use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{VlmBackend, VlmError, VlmQuery};
use crate::annotation::GroundTruthSegmentation;
use crate::grid::LabelMap;
use crate::prompt::Boundary;

/// Answers grid queries from ground truth instead of looking at pixels.
///
/// With `noise_std_s == 0` the reply is the label nearest to the focused
/// task's true boundary. Otherwise the boundary is first perturbed by
/// Gaussian noise drawn from an RNG keyed on the seed and the query itself,
/// so answers do not depend on the order in which concurrent searches run.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: GroundTruthSegmentation,
    noise_std_s: f64,
    seed: u64,
}

impl OracleBackend {
    pub fn exact(truth: GroundTruthSegmentation) -> Self {
        Self {
            truth,
            noise_std_s: 0.0,
            seed: 0,
        }
    }

    pub fn noisy(truth: GroundTruthSegmentation, noise_std_s: f64, seed: u64) -> Result<Self, VlmError> {
        if !(noise_std_s >= 0.0 && noise_std_s.is_finite()) {
            return Err(VlmError::Config(format!("noise_std_s must be >= 0, got {noise_std_s}")));
        }
        Ok(Self {
            truth,
            noise_std_s,
            seed,
        })
    }

    pub fn true_boundary(&self, task_focus: usize, boundary: Boundary) -> Result<f64, VlmError> {
        let seg = task_focus
            .checked_sub(1)
            .and_then(|i| self.truth.segments.get(i))
            .ok_or_else(|| {
                VlmError::Config(format!(
                    "task {task_focus} requested but ground truth has {} segments",
                    self.truth.segments.len()
                ))
            })?;
        Ok(match boundary {
            Boundary::Start => seg.start_s,
            Boundary::End => seg.end_s,
        })
    }

    fn perturb(&self, target: f64, query: &VlmQuery<'_>) -> f64 {
        if self.noise_std_s == 0.0 {
            return target;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((query.task_focus as u64).to_le_bytes());
        h.update([query.boundary as u8]);
        for t in query.grid.label_map.times() {
            h.update(t.to_bits().to_le_bytes());
        }
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let normal = Normal::new(0.0, self.noise_std_s).expect("std checked at construction");
        target + normal.sample(&mut rng)
    }
}

/// Label whose timestamp is closest to `target`; ties go to the earlier one.
pub fn nearest_label(map: &LabelMap, target: f64) -> u32 {
    let mut best = (1, f64::INFINITY);
    for (label, t) in map.iter() {
        let d = (t - target).abs();
        if d < best.1 {
            best = (label, d);
        }
    }
    best.0
}

impl VlmBackend for OracleBackend {
    fn id(&self) -> String {
        if self.noise_std_s > 0.0 {
            format!("noisy-oracle(std={},seed={})", self.noise_std_s, self.seed)
        } else {
            "oracle".to_string()
        }
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        let target = self.perturb(self.true_boundary(query.task_focus, query.boundary)?, query);
        let label = nearest_label(&query.grid.label_map, target);
        Ok(format!(
            "Frame {label} is nearest to the {} of task {}. {{\"points\": [{label}]}}",
            query.boundary, query.task_focus
        ))
    }
}
