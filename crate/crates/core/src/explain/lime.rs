//! Local linear surrogate explanation for sequence models.
//!
//! A local dataset is built by flipping each feature to its nop replacement
//! independently with probability `p`; samples are weighted by an
//! exponential kernel over the flip-indicator distance and a weighted ridge
//! regression recovers per-feature weights. The regression runs on the
//! binary keep/flip indicators (the interpretable representation); the
//! perturbed value vectors feed the model to obtain responses.

use super::ExplainError;
use crate::models::{Embedding, FeatureView, Model, ModelKind, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct LimeConfig {
    /// Sample count; default `max(200, 10 * L)`.
    pub samples: Option<usize>,
    /// Per-feature flip probability.
    pub flip_prob: f64,
    /// Kernel width; default `0.75 * sqrt(L)` in flip-distance units.
    pub kernel_width: Option<f64>,
    /// Ridge regularizer on the weights (not the intercept).
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            samples: None,
            flip_prob: 0.3,
            kernel_width: None,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn effective_samples(&self, features: usize) -> usize {
        self.samples.unwrap_or_else(|| (10 * features).max(200))
    }

    pub fn effective_width(&self, features: usize) -> f64 {
        self.kernel_width
            .unwrap_or_else(|| 0.75 * (features as f64).sqrt())
    }
}

/// One perturbed sample of the local dataset.
#[derive(Clone, Debug)]
pub struct LimeSample {
    /// Indices flipped to their nop replacement.
    pub flips: Vec<usize>,
    /// 1.0 where the original feature is kept, 0.0 where flipped.
    pub indicators: Vec<f64>,
    /// Full perturbed feature vector.
    pub values: Vec<f64>,
    /// Kernel weight `exp(-flips / sigma^2)`.
    pub weight: f64,
}

pub fn lime_dataset(view: &FeatureView, cfg: &LimeConfig) -> Vec<LimeSample> {
    let n_features = view.len();
    let count = cfg.effective_samples(n_features);
    let sigma = cfg.effective_width(n_features);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut flips = Vec::new();
        let mut indicators = vec![1.0f64; n_features];
        let mut values = view.values.clone();
        for j in 0..n_features {
            if rng.gen_bool(cfg.flip_prob) {
                flips.push(j);
                indicators[j] = 0.0;
                values[j] = view.nop_values[j];
            }
        }
        // Squared distance in the flip-indicator space is the flip count.
        let weight = (-(flips.len() as f64) / (sigma * sigma)).exp();
        out.push(LimeSample {
            flips,
            indicators,
            values,
            weight,
        });
    }
    out
}

/// Recovered local linear model `g(x) = a^T x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWeights {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination of the fit.
    pub r_squared: f64,
}

/// Weighted ridge least squares. The intercept column is not penalized.
pub fn lime_fit(
    samples: &[Vec<f64>],
    weights: &[f64],
    responses: &[f64],
    ridge: f64,
) -> Result<FeatureWeights, ExplainError> {
    assert_eq!(samples.len(), weights.len());
    assert_eq!(samples.len(), responses.len());
    let n_features = samples.first().map_or(0, |s| s.len());
    let dim = n_features + 1; // trailing intercept column

    // Normal equations: (X^T W X + lambda I') beta = X^T W y.
    let mut ata = vec![vec![0.0f64; dim]; dim];
    let mut aty = vec![0.0f64; dim];
    for ((x, &w), &y) in samples.iter().zip(weights).zip(responses) {
        debug_assert_eq!(x.len(), n_features);
        for i in 0..n_features {
            let xi = w * x[i];
            for j in i..n_features {
                ata[i][j] += xi * x[j];
            }
            ata[i][n_features] += xi;
            aty[i] += xi * y;
        }
        ata[n_features][n_features] += w;
        aty[n_features] += w * y;
    }
    for i in 0..dim {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }
    // Penalize the weights only; the intercept stays free.
    for (i, row) in ata.iter_mut().enumerate().take(n_features) {
        row[i] += ridge;
    }

    let beta = solve(ata, aty)?;
    let (weights_out, intercept) = {
        let mut a = beta;
        let b = a.pop().unwrap_or(0.0);
        (a, b)
    };

    // Weighted R^2 diagnostics.
    let wsum: f64 = weights.iter().sum();
    let mean = if wsum > 0.0 {
        weights
            .iter()
            .zip(responses)
            .map(|(w, y)| w * y)
            .sum::<f64>()
            / wsum
    } else {
        0.0
    };
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for ((x, &w), &y) in samples.iter().zip(weights).zip(responses) {
        let pred: f64 =
            x.iter().zip(&weights_out).map(|(a, b)| a * b).sum::<f64>() + intercept;
        ss_res += w * (y - pred) * (y - pred);
        ss_tot += w * (y - mean) * (y - mean);
    }
    let r_squared = if ss_tot > 1e-300 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };

    Ok(FeatureWeights {
        weights: weights_out,
        intercept,
        r_squared,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Result<Vec<f64>, ExplainError> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| {
                m[a][col]
                    .abs()
                    .partial_cmp(&m[b][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if m[pivot][col].abs() < 1e-12 {
            return Err(ExplainError::Degenerate);
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Ok(x)
}

/// LIME explanation of a sequence model against a fixed target embedding.
///
/// Sample responses are evaluated incrementally: the unnormalized function
/// vector is a positional-weighted sum of per-instruction embeddings, so a
/// sample's embedding is the base sum plus one precomputed delta per flipped
/// feature. This matches `embed_from_features` up to floating-point
/// accumulation order and is what makes explainer-based selection cheaper
/// than per-instruction ablation.
pub fn explain_sequence(
    model: &Model,
    view: &FeatureView,
    target: &Embedding,
    cfg: &LimeConfig,
) -> Result<FeatureWeights, ExplainError> {
    if !view.kind.is_sequence() {
        return Err(ExplainError::GranularityMismatch {
            expected: "sequence",
            got: view.kind.name(),
        });
    }
    let samples = lime_dataset(view, cfg);
    let base = base_vector(model, view);
    let deltas = flip_deltas(model, view);

    let mut responses = Vec::with_capacity(samples.len());
    let mut scratch = vec![0.0f64; model.dim];
    for sample in &samples {
        scratch.copy_from_slice(&base);
        for &j in &sample.flips {
            for (acc, d) in scratch.iter_mut().zip(&deltas[j]) {
                *acc += d;
            }
        }
        responses.push(cosine_raw(&scratch, &target.values));
    }

    let indicator_rows: Vec<Vec<f64>> = samples.iter().map(|s| s.indicators.clone()).collect();
    let kernel: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    lime_fit(&indicator_rows, &kernel, &responses, cfg.ridge)
}

/// Unnormalized function vector (cosine normalizes anyway).
fn base_vector(model: &Model, view: &FeatureView) -> Vec<f64> {
    let mut out = vec![0.0f64; model.dim];
    match view.kind {
        ModelKind::SeqToken => {
            let counts = token_counts(view);
            for (idx, &v) in view.values.iter().enumerate() {
                let instr = view.provenance[idx].instr_index().unwrap();
                let coeff = crate::models::positional_weight(instr) / counts[instr] as f64;
                for (acc, x) in out.iter_mut().zip(&model.table_lookup(v.round())) {
                    *acc += coeff * x;
                }
            }
        }
        ModelKind::SeqInstr => {
            for (i, &v) in view.values.iter().enumerate() {
                let coeff = crate::models::positional_weight(i);
                for (acc, x) in out.iter_mut().zip(&model.table_lookup(v)) {
                    *acc += coeff * x;
                }
            }
        }
        ModelKind::Graph => unreachable!("checked by the caller"),
    }
    out
}

/// Per-feature delta applied to the base vector when the feature flips.
fn flip_deltas(model: &Model, view: &FeatureView) -> Vec<Vec<f64>> {
    let mut deltas = Vec::with_capacity(view.len());
    match view.kind {
        ModelKind::SeqToken => {
            let counts = token_counts(view);
            for (idx, &v) in view.values.iter().enumerate() {
                let instr = view.provenance[idx].instr_index().unwrap();
                let coeff = crate::models::positional_weight(instr) / counts[instr] as f64;
                let orig = model.table_lookup(v.round());
                let nop = model.table_lookup(view.nop_values[idx].round());
                deltas.push(
                    nop.iter()
                        .zip(&orig)
                        .map(|(n, o)| coeff * (n - o))
                        .collect(),
                );
            }
        }
        ModelKind::SeqInstr => {
            for (i, &v) in view.values.iter().enumerate() {
                let coeff = crate::models::positional_weight(i);
                let orig = model.table_lookup(v);
                let nop = model.table_lookup(view.nop_values[i]);
                deltas.push(
                    nop.iter()
                        .zip(&orig)
                        .map(|(n, o)| coeff * (n - o))
                        .collect(),
                );
            }
        }
        ModelKind::Graph => unreachable!("checked by the caller"),
    }
    deltas
}

fn token_counts(view: &FeatureView) -> Vec<usize> {
    let mut counts = vec![0usize; view.instr_count];
    for p in &view.provenance {
        if let Provenance::Token { instr, .. } = p {
            counts[*instr] += 1;
        }
    }
    counts
}

fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na > 1e-300 && nb > 1e-300 {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_function;
    use crate::models::Model;
    use rand::Rng;

    #[test]
    fn zero_flip_probability_keeps_the_original() {
        let f = parse_function("fn f:\nentry:\n  add r1, 1\n  ret\n").unwrap();
        let m = Model::new(ModelKind::SeqToken, 1);
        let view = m.feature_view(&f);
        let cfg = LimeConfig {
            samples: Some(10),
            flip_prob: 1e-12,
            ..LimeConfig::default()
        };
        for s in lime_dataset(&view, &cfg) {
            assert!(s.flips.is_empty());
            assert_eq!(s.values, view.values);
            assert_eq!(s.weight, 1.0);
        }
    }

    #[test]
    fn all_flipped_weight_matches_closed_form() {
        let f = parse_function("fn f:\nentry:\n  add r1, 1\n  ret\n").unwrap();
        let m = Model::new(ModelKind::SeqToken, 1);
        let view = m.feature_view(&f);
        let cfg = LimeConfig {
            samples: Some(5),
            flip_prob: 1.0 - 1e-12,
            ..LimeConfig::default()
        };
        let l = view.len() as f64;
        let sigma = cfg.effective_width(view.len());
        for s in lime_dataset(&view, &cfg) {
            assert_eq!(s.flips.len(), view.len());
            assert!((s.weight - (-l / (sigma * sigma)).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_flip_rate_close_to_p() {
        let f = parse_function("fn f:\nentry:\n  add r1, 1\n  mov r2, 3\n  sub r3, r4\n  ret\n")
            .unwrap();
        let m = Model::new(ModelKind::SeqToken, 1);
        let view = m.feature_view(&f);
        let cfg = LimeConfig {
            samples: Some(10_000),
            flip_prob: 0.3,
            seed: 7,
            ..LimeConfig::default()
        };
        let samples = lime_dataset(&view, &cfg);
        let total: usize = samples.iter().map(|s| s.flips.len()).sum();
        let rate = total as f64 / (samples.len() * view.len()) as f64;
        assert!((rate - 0.3).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn recovers_affine_responses_exactly() {
        // f(x) = 3*x0 - x1 + 5 over random samples.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let responses: Vec<f64> = samples.iter().map(|s| 3.0 * s[0] - s[1] + 5.0).collect();
        let weights = vec![1.0; samples.len()];
        let fit = lime_fit(&samples, &weights, &responses, 0.0).unwrap();
        assert!((fit.weights[0] - 3.0).abs() < 1e-6);
        assert!((fit.weights[1] + 1.0).abs() < 1e-6);
        assert!((fit.intercept - 5.0).abs() < 1e-6);
        assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn constant_responses_give_zero_weights() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let samples: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let responses = vec![0.42; samples.len()];
        let weights = vec![1.0; samples.len()];
        let fit = lime_fit(&samples, &weights, &responses, 0.0).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((fit.intercept - 0.42).abs() < 1e-9);
    }

    #[test]
    fn degenerate_design_is_reported() {
        // Two identical columns and no ridge.
        let samples = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let weights = vec![1.0; 3];
        let responses = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            lime_fit(&samples, &weights, &responses, 0.0),
            Err(ExplainError::Degenerate)
        ));
        // Ridge resolves it.
        assert!(lime_fit(&samples, &weights, &responses, 1e-6).is_ok());
    }

    #[test]
    fn incremental_responses_match_embed_from_features() {
        let f = parse_function(
            "fn f:\nentry:\n  mov r1, @s\n  add r1, 7\n  cmp r1, 0\n  je out\nmid:\n  call g\nout:\n  ret\n",
        )
        .unwrap();
        for kind in [ModelKind::SeqToken, ModelKind::SeqInstr] {
            let m = Model::new(kind, 21);
            let view = m.feature_view(&f);
            let target = m.embed(&f);
            let cfg = LimeConfig {
                samples: Some(64),
                seed: 5,
                ..LimeConfig::default()
            };
            let samples = lime_dataset(&view, &cfg);
            let base = base_vector(&m, &view);
            let deltas = flip_deltas(&m, &view);
            for s in &samples {
                let mut fast = base.clone();
                for &j in &s.flips {
                    for (acc, d) in fast.iter_mut().zip(&deltas[j]) {
                        *acc += d;
                    }
                }
                let fast_sim = cosine_raw(&fast, &target.values);
                let slow = m.embed_from_features(&view, &s.values).unwrap();
                let slow_sim = slow.cosine(&target);
                assert!((fast_sim - slow_sim).abs() < 1e-9, "{kind:?}");
            }
        }
    }

    #[test]
    fn lime_sign_matches_single_feature_ablation_for_top_deltas() {
        let f = parse_function(
            "fn f:\nentry:\n  mov r1, @s\n  add r2, 7\n  xor r3, r3\n  call g\n  ret\n",
        )
        .unwrap();
        let m = Model::new(ModelKind::SeqInstr, 8);
        let view = m.feature_view(&f);
        // Explain against an unrelated target.
        let t = parse_function("fn t:\nentry:\n  shl r5, 2\n  sub r6, r7\n  ret\n").unwrap();
        let target = m.embed(&t);
        let cfg = LimeConfig {
            samples: Some(2000),
            seed: 11,
            ..LimeConfig::default()
        };
        let fit = explain_sequence(&m, &view, &target, &cfg).unwrap();

        // Brute-force oracle: flip one feature at a time, measure the
        // similarity change. a_j is the effect of keeping feature j, so
        // sign(a_j) should equal sign(-delta_j) for the strongest features.
        let base_sim = m
            .embed_from_features(&view, &view.values)
            .unwrap()
            .cosine(&target);
        let mut deltas: Vec<(usize, f64)> = (0..view.len())
            .map(|j| {
                let mut v = view.values.clone();
                v[j] = view.nop_values[j];
                let sim = m.embed_from_features(&view, &v).unwrap().cosine(&target);
                (j, sim - base_sim)
            })
            .collect();
        deltas.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
        for &(j, delta) in deltas.iter().take(3) {
            assert_eq!(
                fit.weights[j].signum(),
                (-delta).signum(),
                "feature {j}: weight {} vs delta {delta}",
                fit.weights[j]
            );
        }
    }
}
