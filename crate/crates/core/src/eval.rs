//! Objective scoring: dynamic-time-warping alignment of log-mel frames,
//! mel spectral distortion for parallel and non-parallel protocols, and an
//! energy-centroid probe used by the synthetic end-to-end checks.

use crate::dsp::{MelSpectrogram, Spectrogram};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("mel dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("all-zero spectrogram has no centroid")]
    AllZero,
}

/// Monotone alignment between two frame sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    /// Index pairs from `(0, 0)` to `(Ta - 1, Tb - 1)`; each step is
    /// `(1,0)`, `(0,1)` or `(1,1)`.
    pub path: Vec<(usize, usize)>,
    pub total_cost: f64,
    /// `total_cost / path length`.
    pub normalized_cost: f64,
}

fn frame_matrix(m: &MelSpectrogram) -> Vec<Vec<f64>> {
    (0..m.frames()).map(|t| m.frame(t)).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimal-cost monotone alignment under per-pair Euclidean distance,
/// by the standard quadratic dynamic program. Ties during backtracking
/// prefer the diagonal.
pub fn dtw_align(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<DtwResult, EvalError> {
    if a.frames() == 0 || b.frames() == 0 {
        return Err(EvalError::EmptyInput("dtw operand has no frames"));
    }
    if a.n_mels() != b.n_mels() {
        return Err(EvalError::DimensionMismatch {
            a: a.n_mels(),
            b: b.n_mels(),
        });
    }
    let fa = frame_matrix(a);
    let fb = frame_matrix(b);
    let (ta, tb) = (fa.len(), fb.len());

    let mut acc = vec![f64::INFINITY; ta * tb];
    let idx = |i: usize, j: usize| i * tb + j;
    for i in 0..ta {
        for j in 0..tb {
            let cost = euclidean(&fa[i], &fb[j]);
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[idx(i - 1, j - 1)]);
                }
                if i > 0 {
                    best = best.min(acc[idx(i - 1, j)]);
                }
                if j > 0 {
                    best = best.min(acc[idx(i, j - 1)]);
                }
                best
            };
            acc[idx(i, j)] = cost + best_prev;
        }
    }

    // Backtrack, diagonal first on ties.
    let mut path = vec![(ta - 1, tb - 1)];
    let (mut i, mut j) = (ta - 1, tb - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[idx(i - 1, j - 1)]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[idx(i - 1, j)] } else { f64::INFINITY };
        let left = if j > 0 { acc[idx(i, j - 1)] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();

    let total_cost = acc[idx(ta - 1, tb - 1)];
    Ok(DtwResult {
        normalized_cost: total_cost / path.len() as f64,
        total_cost,
        path,
    })
}

/// Mean per-pair log-mel distance along the optimal alignment.
pub fn msd_parallel(
    converted: &MelSpectrogram,
    reference: &MelSpectrogram,
) -> Result<f64, EvalError> {
    Ok(dtw_align(converted, reference)?.normalized_cost)
}

/// Reference sample of a target identity, with its internal distortion
/// statistic precomputed: the same pairwise-average score the converted
/// utterances receive, applied to the references themselves (self-pairs
/// included, contributing zero).
#[derive(Clone, Debug)]
pub struct TargetStats {
    pub references: Vec<MelSpectrogram>,
    pub ground_truth_mean: f64,
    pub ground_truth_std: f64,
}

impl TargetStats {
    pub fn build(references: Vec<MelSpectrogram>) -> Result<Self, EvalError> {
        if references.is_empty() {
            return Err(EvalError::EmptyInput("reference sample is empty"));
        }
        let scores = per_utterance_scores(&references, &references)?;
        let (ground_truth_mean, ground_truth_std) = mean_std(&scores);
        Ok(TargetStats {
            references,
            ground_truth_mean,
            ground_truth_std,
        })
    }
}

/// Mean distortion of each converted utterance against every reference.
pub fn per_utterance_scores(
    converted: &[MelSpectrogram],
    references: &[MelSpectrogram],
) -> Result<Vec<f64>, EvalError> {
    if references.is_empty() {
        return Err(EvalError::EmptyInput("reference sample is empty"));
    }
    converted
        .iter()
        .map(|c| {
            let mut acc = 0.0;
            for r in references {
                acc += msd_parallel(c, r)?;
            }
            Ok(acc / references.len() as f64)
        })
        .collect()
}

/// Distortion of a converted set against a fixed reference sample:
/// the mean over all (converted, reference) pairs.
pub fn msd_nonparallel(
    converted: &[MelSpectrogram],
    stats: &TargetStats,
) -> Result<f64, EvalError> {
    if converted.is_empty() {
        return Err(EvalError::EmptyInput("converted set is empty"));
    }
    let scores = per_utterance_scores(converted, &stats.references)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Energy-weighted mean bin frequency, averaged over frames with energy.
pub fn spectral_centroid(spec: &Spectrogram, sample_rate: u32) -> Result<f64, EvalError> {
    let window = 2 * (spec.bins() - 1);
    let bin_hz = sample_rate as f64 / window as f64;
    let mut frame_centroids = Vec::new();
    for t in 0..spec.frames() {
        let mut energy = 0.0;
        let mut weighted = 0.0;
        for k in 0..spec.bins() {
            let m = spec.mag.row(k)[t];
            energy += m;
            weighted += m * k as f64 * bin_hz;
        }
        if energy > 0.0 {
            frame_centroids.push(weighted / energy);
        }
    }
    if frame_centroids.is_empty() {
        return Err(EvalError::AllZero);
    }
    Ok(frame_centroids.iter().sum::<f64>() / frame_centroids.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Parallel,
    Nonparallel,
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Parallel => "parallel",
            Protocol::Nonparallel => "nonparallel-pairwise",
        }
    }
}

#[derive(Clone, Debug)]
pub struct UtteranceScore {
    pub name: String,
    pub msd: f64,
}

/// Distortion summary for one conversion direction.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub pair_label: String,
    pub protocol: Protocol,
    pub utterances: Vec<UtteranceScore>,
    pub msd_mean: f64,
    pub msd_std: f64,
    /// Internal distortion of the real target sample (non-parallel only).
    pub ground_truth: Option<(f64, f64)>,
}

impl EvalReport {
    pub fn from_scores(
        pair_label: String,
        protocol: Protocol,
        utterances: Vec<UtteranceScore>,
        ground_truth: Option<(f64, f64)>,
    ) -> Self {
        let values: Vec<f64> = utterances.iter().map(|u| u.msd).collect();
        let (msd_mean, msd_std) = mean_std(&values);
        EvalReport {
            pair_label,
            protocol,
            utterances,
            msd_mean,
            msd_std,
            ground_truth,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,protocol,utterance,msd\n");
        for u in &self.utterances {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.pair_label,
                self.protocol.label(),
                u.name,
                u.msd
            ));
        }
        out.push_str(&format!(
            "{},{},AGGREGATE_MEAN,{}\n{},{},AGGREGATE_STD,{}\n",
            self.pair_label,
            self.protocol.label(),
            self.msd_mean,
            self.pair_label,
            self.protocol.label(),
            self.msd_std
        ));
        if let Some((gt_mean, gt_std)) = self.ground_truth {
            out.push_str(&format!(
                "{},{},GROUND_TRUTH_MEAN,{}\n{},{},GROUND_TRUTH_STD,{}\n",
                self.pair_label,
                self.protocol.label(),
                gt_mean,
                self.pair_label,
                self.protocol.label(),
                gt_std
            ));
        }
        out
    }

    /// Human-readable table; the WER column is not computable here (it
    /// needs an external speech recognizer) and says so.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12}  {:<6}  {}\n",
            "pair", "metric", "value"
        ));
        out.push_str(&format!(
            "{:<12}  {:<6}  {:.3} +- {:.3}  ({} utterances, protocol={})\n",
            self.pair_label,
            "MSD",
            self.msd_mean,
            self.msd_std,
            self.utterances.len(),
            self.protocol.label()
        ));
        if let Some((gt_mean, gt_std)) = self.ground_truth {
            out.push_str(&format!(
                "{:<12}  {:<6}  {:.3} +- {:.3}  (real target sample, internal)\n",
                self.pair_label, "GT-MSD", gt_mean, gt_std
            ));
        }
        out.push_str(&format!(
            "{:<12}  {:<6}  n/a (requires an external speech recognizer)\n",
            self.pair_label, "WER"
        ));
        out.push_str(&format!(
            "{:<12}  {:<6}  n/a (requires human listening tests)\n",
            self.pair_label, "MOS"
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::dsp::StftConfig;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn mel(frames: &[Vec<f64>]) -> MelSpectrogram {
        let t = frames.len();
        let d = frames[0].len();
        let mut logmel = Tensor::zeros(&[d, t]);
        for (ti, f) in frames.iter().enumerate() {
            for (m, &v) in f.iter().enumerate() {
                logmel.row_mut(m)[ti] = v;
            }
        }
        MelSpectrogram { logmel }
    }

    fn random_mel(t: usize, d: usize, rng: &mut Rng) -> MelSpectrogram {
        mel(&(0..t)
            .map(|_| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect::<Vec<_>>())
    }

    /// Exhaustive enumeration over every monotone path.
    fn dtw_oracle(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
        let fa = frame_matrix(a);
        let fb = frame_matrix(b);
        fn explore(i: usize, j: usize, fa: &[Vec<f64>], fb: &[Vec<f64>]) -> f64 {
            let here = euclidean(&fa[i], &fb[j]);
            if i + 1 == fa.len() && j + 1 == fb.len() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < fa.len() && j + 1 < fb.len() {
                best = best.min(explore(i + 1, j + 1, fa, fb));
            }
            if i + 1 < fa.len() {
                best = best.min(explore(i + 1, j, fa, fb));
            }
            if j + 1 < fb.len() {
                best = best.min(explore(i, j + 1, fa, fb));
            }
            here + best
        }
        explore(0, 0, &fa, &fb)
    }

    #[test]
    fn identical_inputs_align_on_the_diagonal_at_zero_cost() {
        let mut rng = Rng::seed_from(100);
        let a = random_mel(6, 4, &mut rng);
        let r = dtw_align(&a, &a).unwrap();
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(r.normalized_cost, 0.0);
        assert_eq!(r.path, (0..6).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn single_frame_operand_forces_a_full_sweep() {
        let mut rng = Rng::seed_from(101);
        let a = random_mel(1, 3, &mut rng);
        let b = random_mel(5, 3, &mut rng);
        let r = dtw_align(&a, &b).unwrap();
        assert_eq!(r.path, (0..5).map(|j| (0, j)).collect::<Vec<_>>());
    }

    #[test]
    fn dtw_matches_the_exhaustive_oracle_on_a_random_pair() {
        let mut rng = Rng::seed_from(102);
        let a = random_mel(5, 4, &mut rng);
        let b = random_mel(6, 4, &mut rng);
        let got = dtw_align(&a, &b).unwrap().total_cost;
        let want = dtw_oracle(&a, &b);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn path_steps_are_monotone_and_anchored() {
        let mut rng = Rng::seed_from(103);
        let a = random_mel(7, 3, &mut rng);
        let b = random_mel(4, 3, &mut rng);
        let r = dtw_align(&a, &b).unwrap();
        assert_eq!(*r.path.first().unwrap(), (0, 0));
        assert_eq!(*r.path.last().unwrap(), (6, 3));
        for w in r.path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!((di, dj), (0, 1) | (1, 0) | (1, 1)));
        }
    }

    #[test]
    fn msd_closed_forms() {
        let mut rng = Rng::seed_from(104);
        let a = random_mel(8, 40, &mut rng);
        assert_eq!(msd_parallel(&a, &a).unwrap(), 0.0);

        // constant shift c in every bin: sqrt(40) * |c| regardless of path
        let c = 0.35;
        let shifted = MelSpectrogram {
            logmel: a.logmel.map(|v| v + c),
        };
        let msd = msd_parallel(&a, &shifted).unwrap();
        assert!((msd - 40.0f64.sqrt() * c).abs() < 1e-10, "{msd}");
    }

    #[test]
    fn nonparallel_statistics() {
        let mut rng = Rng::seed_from(105);
        let refs: Vec<MelSpectrogram> = (0..3).map(|_| random_mel(4, 5, &mut rng)).collect();
        let stats = TargetStats::build(refs.clone()).unwrap();

        // converted set identical to the reference sample matches exactly
        let converted_stat = msd_nonparallel(&refs, &stats).unwrap();
        assert_eq!(converted_stat, stats.ground_truth_mean);

        // single 1-frame pair reduces to one Euclidean distance
        let p = mel(&[vec![1.0, 2.0]]);
        let q = mel(&[vec![4.0, 6.0]]);
        let one = TargetStats::build(vec![q]).unwrap();
        let v = msd_nonparallel(std::slice::from_ref(&p), &one).unwrap();
        assert!((v - 5.0).abs() < 1e-12);

        // 3 converted x 2 references equals the hand-made average
        let conv: Vec<MelSpectrogram> = (0..3).map(|_| random_mel(4, 5, &mut rng)).collect();
        let refs2: Vec<MelSpectrogram> = (0..2).map(|_| random_mel(5, 5, &mut rng)).collect();
        let stats2 = TargetStats::build(refs2.clone()).unwrap();
        let got = msd_nonparallel(&conv, &stats2).unwrap();
        let mut hand = 0.0;
        for c in &conv {
            for r in &refs2 {
                hand += msd_parallel(c, r).unwrap();
            }
        }
        hand /= 6.0;
        assert!((got - hand).abs() < 1e-12);
    }

    #[test]
    fn centroid_closed_forms() {
        let cfg = StftConfig::new(8, 2).unwrap(); // 5 bins, window 8
        let sr = 16000;
        let bin_hz = sr as f64 / 8.0;

        // energy concentrated in one bin
        let mut mag = Tensor::zeros(&[5, 3]);
        for t in 0..3 {
            mag.row_mut(3)[t] = 2.0;
        }
        let spec = Spectrogram::new(mag, cfg).unwrap();
        let c = spectral_centroid(&spec, sr).unwrap();
        assert!((c - 3.0 * bin_hz).abs() < 1e-12);

        // uniform spectrum: mean of bin frequencies
        let spec = Spectrogram::new(Tensor::filled(&[5, 2], 1.0), cfg).unwrap();
        let c = spectral_centroid(&spec, sr).unwrap();
        assert!((c - 2.0 * bin_hz).abs() < 1e-12);

        // two tones, hand-weighted
        let mut mag = Tensor::zeros(&[5, 1]);
        mag.row_mut(1)[0] = 3.0;
        mag.row_mut(4)[0] = 1.0;
        let spec = Spectrogram::new(mag, cfg).unwrap();
        let c = spectral_centroid(&spec, sr).unwrap();
        let want = (3.0 * 1.0 + 1.0 * 4.0) / 4.0 * bin_hz;
        assert!((c - want).abs() < 1e-12);

        // all-zero input is an error
        let spec = Spectrogram::new(Tensor::zeros(&[5, 2]), cfg).unwrap();
        assert!(matches!(
            spectral_centroid(&spec, sr),
            Err(EvalError::AllZero)
        ));
    }

    #[test]
    fn report_aggregate_matches_recomputation() {
        let utterances = vec![
            UtteranceScore {
                name: "u0".into(),
                msd: 1.0,
            },
            UtteranceScore {
                name: "u1".into(),
                msd: 2.0,
            },
            UtteranceScore {
                name: "u2".into(),
                msd: 4.0,
            },
        ];
        let report = EvalReport::from_scores("a->b".into(), Protocol::Parallel, utterances, None);
        let values: Vec<f64> = report.utterances.iter().map(|u| u.msd).collect();
        let (m, s) = mean_std(&values);
        assert_eq!(report.msd_mean, m);
        assert_eq!(report.msd_std, s);
        assert!(report.to_csv().contains("AGGREGATE_MEAN"));
        assert!(report.to_table().contains("n/a"));
    }

    proptest! {
        #[test]
        fn dtw_agrees_with_enumeration_on_all_small_shapes(
            ta in 1usize..=6,
            tb in 1usize..=6,
            seed in 0u64..200,
        ) {
            let mut rng = Rng::seed_from(seed);
            let a = random_mel(ta, 3, &mut rng);
            let b = random_mel(tb, 3, &mut rng);
            let got = dtw_align(&a, &b).unwrap().total_cost;
            let want = dtw_oracle(&a, &b);
            prop_assert!((got - want).abs() < 1e-10);
        }

        #[test]
        fn dtw_cost_is_symmetric(ta in 1usize..=6, tb in 1usize..=6, seed in 0u64..200) {
            let mut rng = Rng::seed_from(seed ^ 0xAB);
            let a = random_mel(ta, 3, &mut rng);
            let b = random_mel(tb, 3, &mut rng);
            let ab = dtw_align(&a, &b).unwrap().total_cost;
            let ba = dtw_align(&b, &a).unwrap().total_cost;
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn dtw_beats_the_plain_diagonal_when_square(t in 1usize..=6, seed in 0u64..200) {
            let mut rng = Rng::seed_from(seed ^ 0xCD);
            let a = random_mel(t, 3, &mut rng);
            let b = random_mel(t, 3, &mut rng);
            let fa = frame_matrix(&a);
            let fb = frame_matrix(&b);
            let diagonal: f64 = (0..t).map(|i| euclidean(&fa[i], &fb[i])).sum();
            let best = dtw_align(&a, &b).unwrap().total_cost;
            prop_assert!(best <= diagonal + 1e-12);
        }

        #[test]
        fn msd_is_nonnegative(seed in 0u64..300) {
            let mut rng = Rng::seed_from(seed ^ 0xEF);
            let a = random_mel(1 + (seed as usize % 5), 4, &mut rng);
            let b = random_mel(1 + (seed as usize % 7), 4, &mut rng);
            prop_assert!(msd_parallel(&a, &b).unwrap() >= 0.0);
        }
    }
}
