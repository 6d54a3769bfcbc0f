//! The loss terms: cycle consistency, perceptual distance, the one-sided
//! edge-preservation / edge-introduction losses and least-squares
//! adversarial terms, plus the weighted total objective.
//!
//! Every loss is a pure function returning a scalar tensor, so gradients
//! flow to whatever produced the inputs. Sign-derived masks and balance
//! factors are computed from detached tensors and act as constants during
//! differentiation.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};

use crate::config::{ExperimentConfig, PairTag};
use crate::error::{Error, Result};
use crate::tensor::{ensure_finite, EdgeMap, FeatureStack};

pub(crate) fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.detach().to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference between an original and its reconstruction
/// after a full cycle. Unweighted; the cycle weight is applied by
/// [`total_objective`].
pub fn cycle_consistency_loss(original: &Tensor, reconstructed: &Tensor) -> Result<Tensor> {
    check_same_shape(original, reconstructed, "cycle consistency")?;
    Ok((original - reconstructed)?.abs()?.mean_all()?)
}

/// Weighted sum of per-layer mean squared distances between two feature
/// stacks produced by the same frozen extractor.
pub fn perceptual_distance(f_a: &FeatureStack, f_b: &FeatureStack) -> Result<Tensor> {
    if f_a.len() != f_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature stacks have {} vs {} layers",
            f_a.len(),
            f_b.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (i, ((ta, wa), (tb, wb))) in f_a.layers().iter().zip(f_b.layers().iter()).enumerate() {
        check_same_shape(ta, tb, &format!("feature layer {i}"))?;
        if wa != wb {
            return Err(Error::InvalidValue(format!(
                "feature layer {i} weights differ: {wa} vs {wb}"
            )));
        }
        let mse = (ta - tb)?.sqr()?.mean_all()?;
        let term = mse.affine(*wa, 0.0)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("stack has at least one layer"))
}

/// One-sided squared-error penalty for edges of the reference that are
/// weaker in the generated map, scaled by the reference's edge sparsity.
/// Edges that got stronger are not punished.
pub fn edge_preservation_loss(edge_ref: &EdgeMap, edge_gen: &EdgeMap) -> Result<Tensor> {
    let (r, g) = (edge_ref.tensor(), edge_gen.tensor());
    check_same_shape(r, g, "edge preservation")?;
    let err = (r - g)?;
    let pos = err.detach().sign()?.affine(0.5, 0.5)?; // (1 + sign) / 2, constant
    let masked = (pos * &err)?;
    let area = (edge_ref.height() * edge_ref.width()) as f64;
    let f_bal = (area - scalar_f64(&r.sum_all()?)?) / area;
    Ok(masked.sqr()?.sum_all()?.affine(f_bal, 0.0)?)
}

/// One-sided squared-error penalty for edges in the generated map that
/// are absent from the reference, scaled by the reference's edge density.
pub fn edge_introduction_loss(edge_ref: &EdgeMap, edge_gen: &EdgeMap) -> Result<Tensor> {
    let (r, g) = (edge_ref.tensor(), edge_gen.tensor());
    check_same_shape(r, g, "edge introduction")?;
    let err = (r - g)?;
    let neg = err.detach().sign()?.affine(-0.5, 0.5)?; // (1 - sign) / 2, constant
    let masked = (neg * &err)?;
    let area = (edge_ref.height() * edge_ref.width()) as f64;
    let density = scalar_f64(&r.sum_all()?)? / area;
    Ok(masked.sqr()?.sum_all()?.affine(density, 0.0)?)
}

/// Least-squares generator objective: fakes should score 1.
pub fn adversarial_generator_loss(fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(fake_scores, "fake scores")?;
    Ok(fake_scores.affine(1.0, -1.0)?.sqr()?.mean_all()?)
}

/// Least-squares discriminator objective: reals toward 1, fakes toward 0.
pub fn adversarial_discriminator_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(real_scores, "real scores")?;
    ensure_finite(fake_scores, "fake scores")?;
    let real_term = real_scores.affine(1.0, -1.0)?.sqr()?.mean_all()?.affine(0.5, 0.0)?;
    let fake_term = fake_scores.sqr()?.mean_all()?.affine(0.5, 0.0)?;
    Ok((real_term + fake_term)?)
}

/// A raw loss value together with the config weight applied to it.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TermValue {
    pub raw: f64,
    pub weight: f64,
}

impl TermValue {
    pub fn weighted(&self) -> f64 {
        self.raw * self.weight
    }
}

/// Per-step itemization of every loss term, before and after weighting.
///
/// The maps hold only the terms that were actually wired (nonzero weight
/// in the config). `total` is the adversarial terms plus the weighted sum
/// of the constraint terms.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub g_adv_a2b: f64,
    pub g_adv_b2a: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub cyc_a: TermValue,
    pub cyc_b: TermValue,
    pub perceptual: BTreeMap<PairTag, TermValue>,
    pub edge_preservation: BTreeMap<PairTag, TermValue>,
    pub edge_introduction: BTreeMap<PairTag, TermValue>,
    pub total: f64,
}

impl Default for TermValue {
    fn default() -> Self {
        TermValue { raw: 0.0, weight: 0.0 }
    }
}

impl LossReport {
    /// Recomputes the weighted sum from the itemized terms.
    pub fn recompute_total(&self) -> f64 {
        let mut t = self.g_adv_a2b + self.g_adv_b2a + self.d_a + self.d_b;
        t += self.cyc_a.weighted() + self.cyc_b.weighted();
        for map in [&self.perceptual, &self.edge_preservation, &self.edge_introduction] {
            for term in map.values() {
                t += term.weighted();
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        let mut vals = vec![
            self.g_adv_a2b,
            self.g_adv_b2a,
            self.d_a,
            self.d_b,
            self.cyc_a.raw,
            self.cyc_b.raw,
            self.total,
        ];
        for map in [&self.perceptual, &self.edge_preservation, &self.edge_introduction] {
            vals.extend(map.values().map(|t| t.raw));
        }
        vals.iter().all(|v| v.is_finite())
    }

    /// Stable CSV header, one column per term plus the total.
    pub fn csv_header() -> String {
        let mut cols = vec![
            "g_adv_a2b".to_string(),
            "g_adv_b2a".to_string(),
            "d_a".to_string(),
            "d_b".to_string(),
            "cyc_a".to_string(),
            "cyc_b".to_string(),
        ];
        for prefix in ["p", "ep", "ei"] {
            for tag in PairTag::ALL {
                cols.push(format!("{prefix}_{tag}"));
            }
        }
        cols.push("total".to_string());
        cols.join(",")
    }

    /// One CSV row matching [`csv_header`]; unwired terms serialize as 0.
    pub fn csv_row(&self) -> String {
        let mut vals = vec![
            self.g_adv_a2b,
            self.g_adv_b2a,
            self.d_a,
            self.d_b,
            self.cyc_a.raw,
            self.cyc_b.raw,
        ];
        for map in [&self.perceptual, &self.edge_preservation, &self.edge_introduction] {
            for tag in PairTag::ALL {
                vals.push(map.get(&tag).map(|t| t.raw).unwrap_or(0.0));
            }
        }
        vals.push(self.total);
        vals.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
    }
}

/// Raw (unweighted) loss components measured during a step. A component
/// may be absent only if its weight in the config is zero.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub g_adv_a2b: f64,
    pub g_adv_b2a: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub cyc_a: Option<f64>,
    pub cyc_b: Option<f64>,
    pub perceptual: BTreeMap<PairTag, f64>,
    pub edge_preservation: BTreeMap<PairTag, f64>,
    pub edge_introduction: BTreeMap<PairTag, f64>,
}

/// Combines measured components with the config weights into an itemized
/// report. Errors if a nonzero weight has no measured component, naming
/// the offending weight.
pub fn total_objective(components: &LossComponents, config: &ExperimentConfig) -> Result<LossReport> {
    let mut report = LossReport {
        g_adv_a2b: components.g_adv_a2b,
        g_adv_b2a: components.g_adv_b2a,
        d_a: components.d_a,
        d_b: components.d_b,
        ..Default::default()
    };

    let require = |name: &str, weight: f64, value: Option<f64>| -> Result<TermValue> {
        match value {
            Some(raw) => Ok(TermValue { raw, weight }),
            None if weight == 0.0 => Ok(TermValue { raw: 0.0, weight: 0.0 }),
            None => Err(Error::InvalidValue(format!(
                "{name} is {weight} but no component was measured for it"
            ))),
        }
    };

    report.cyc_a = require("lambda_cyc_a", config.lambda_cyc_a, components.cyc_a)?;
    report.cyc_b = require("lambda_cyc_b", config.lambda_cyc_b, components.cyc_b)?;
    for tag in PairTag::ALL {
        for (prefix, weight, measured, out) in [
            ("lambda_p", config.lambda_p(tag), &components.perceptual, &mut report.perceptual),
            (
                "lambda_ep",
                config.lambda_ep(tag),
                &components.edge_preservation,
                &mut report.edge_preservation,
            ),
            (
                "lambda_ei",
                config.lambda_ei(tag),
                &components.edge_introduction,
                &mut report.edge_introduction,
            ),
        ] {
            let value = measured.get(&tag).copied();
            if weight != 0.0 || value.is_some() {
                let term = require(&format!("{prefix}_{tag}"), weight, value)?;
                out.insert(tag, term);
            }
        }
    }

    report.total = report.recompute_total();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::builtin_config;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dev() -> Device {
        Device::Cpu
    }

    fn tensor(data: Vec<f32>, dims: (usize, usize, usize)) -> Tensor {
        Tensor::from_vec(data, dims, &dev()).unwrap()
    }

    fn edge(data: Vec<f32>, h: usize, w: usize) -> EdgeMap {
        EdgeMap::new(Tensor::from_vec(data, (h, w), &dev()).unwrap()).unwrap()
    }

    #[test]
    fn cycle_identity_is_zero() {
        let a = tensor(vec![0.3f32; 3 * 2 * 2], (3, 2, 2));
        let l = cycle_consistency_loss(&a, &a).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn cycle_constant_offset() {
        let a = tensor(vec![0.5f32; 3 * 4 * 4], (3, 4, 4));
        let b = tensor(vec![-0.5f32; 3 * 4 * 4], (3, 4, 4));
        let l = cycle_consistency_loss(&a, &b).unwrap();
        assert!((scalar_f64(&l).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cycle_matches_scalar_loop_oracle() {
        // F64 tensors so the comparison to the f64 loop is exact up to
        // the summation order, well under the pinned tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expect: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / 48.0;
        let l = cycle_consistency_loss(
            &Tensor::from_vec(xs, (3, 4, 4), &dev()).unwrap(),
            &Tensor::from_vec(ys, (3, 4, 4), &dev()).unwrap(),
        )
        .unwrap();
        assert!((scalar_f64(&l).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn cycle_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f32> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f32> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = tensor(xs, (3, 3, 3));
        let b = tensor(ys, (3, 3, 3));
        let base = scalar_f64(&cycle_consistency_loss(&a, &b).unwrap()).unwrap();
        for k in [0.0, 0.5, 2.0, 7.25] {
            let l = cycle_consistency_loss(
                &a.affine(k, 0.0).unwrap(),
                &b.affine(k, 0.0).unwrap(),
            )
            .unwrap();
            assert!((scalar_f64(&l).unwrap() - k * base).abs() < 1e-6);
        }
    }

    #[test]
    fn cycle_rejects_shape_mismatch() {
        let a = tensor(vec![0.0f32; 12], (3, 2, 2));
        let b = tensor(vec![0.0f32; 27], (3, 3, 3));
        assert!(cycle_consistency_loss(&a, &b).is_err());
    }

    #[test]
    fn perceptual_identity_is_zero() {
        let t = tensor(vec![0.1f32; 8], (2, 2, 2));
        let s = FeatureStack::new(vec![(t.clone(), 0.5), (t.clone(), 0.5)]).unwrap();
        let l = perceptual_distance(&s, &s).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_weighted_sum_definition() {
        // Two layers with per-layer MSE 2 and 4, weights 0.5 each -> 3.0.
        let zeros = tensor(vec![0.0f32; 4], (1, 2, 2));
        let sqrt2 = tensor(vec![2.0f32.sqrt(); 4], (1, 2, 2));
        let two = tensor(vec![2.0f32; 4], (1, 2, 2));
        let fa = FeatureStack::new(vec![(zeros.clone(), 0.5), (zeros.clone(), 0.5)]).unwrap();
        let fb = FeatureStack::new(vec![(sqrt2, 0.5), (two, 0.5)]).unwrap();
        let l = perceptual_distance(&fa, &fb).unwrap();
        assert!((scalar_f64(&l).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn perceptual_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shapes = [(2usize, 4usize, 4usize), (3, 2, 2), (1, 3, 5)];
        let weights = [0.3, 1.2, 0.0];
        let mut la = Vec::new();
        let mut lb = Vec::new();
        let mut expect = 0.0f64;
        for (shape, w) in shapes.iter().zip(weights) {
            let n = shape.0 * shape.1 * shape.2;
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mse =
                xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
            expect += w * mse;
            la.push((Tensor::from_vec(xs, *shape, &dev()).unwrap(), w));
            lb.push((Tensor::from_vec(ys, *shape, &dev()).unwrap(), w));
        }
        let l = perceptual_distance(
            &FeatureStack::new(la).unwrap(),
            &FeatureStack::new(lb).unwrap(),
        )
        .unwrap();
        assert!((scalar_f64(&l).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn perceptual_rejects_mismatched_stacks() {
        let t = tensor(vec![0.0f32; 4], (1, 2, 2));
        let one = FeatureStack::new(vec![(t.clone(), 1.0)]).unwrap();
        let two = FeatureStack::new(vec![(t.clone(), 1.0), (t.clone(), 1.0)]).unwrap();
        assert!(perceptual_distance(&one, &two).is_err());
        let wa = FeatureStack::new(vec![(t.clone(), 1.0)]).unwrap();
        let wb = FeatureStack::new(vec![(t, 0.5)]).unwrap();
        assert!(perceptual_distance(&wa, &wb).is_err());
    }

    #[test]
    fn edge_preservation_zero_on_equal_maps() {
        let e = edge(vec![0.2, 0.8, 0.5, 0.0], 2, 2);
        let l = edge_preservation_loss(&e, &e).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn edge_preservation_ignores_stronger_edges() {
        let r = edge(vec![0.0; 4], 2, 2);
        let g = edge(vec![1.0; 4], 2, 2);
        let l = edge_preservation_loss(&r, &g).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn edge_preservation_hand_anchor() {
        let r = edge(vec![1.0, 1.0, 0.0, 0.0], 2, 2);
        let g = edge(vec![0.0; 4], 2, 2);
        let l = edge_preservation_loss(&r, &g).unwrap();
        assert!((scalar_f64(&l).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn edge_introduction_zero_on_equal_maps() {
        let e = edge(vec![0.9, 0.1, 0.4, 0.6], 2, 2);
        let l = edge_introduction_loss(&e, &e).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn edge_introduction_ignores_weaker_edges() {
        let r = edge(vec![1.0; 4], 2, 2);
        let g = edge(vec![0.0; 4], 2, 2);
        let l = edge_introduction_loss(&r, &g).unwrap();
        assert_eq!(scalar_f64(&l).unwrap(), 0.0);
    }

    #[test]
    fn edge_introduction_hand_anchor() {
        let r = edge(vec![1.0, 0.0, 0.0, 0.0], 2, 2);
        let g = edge(vec![1.0, 1.0, 0.0, 0.0], 2, 2);
        let l = edge_introduction_loss(&r, &g).unwrap();
        assert!((scalar_f64(&l).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn edge_losses_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let rs: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let gs: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            // Scalar-loop references.
            let mut ep_sum = 0.0f64;
            let mut ei_sum = 0.0f64;
            let mut ref_sum = 0.0f64;
            for (r, g) in rs.iter().zip(&gs) {
                let err = *r - *g;
                let sign = if err > 0.0 {
                    1.0
                } else if err < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let pos = (1.0 + sign) / 2.0;
                let neg = (1.0 - sign) / 2.0;
                ep_sum += (pos * err) * (pos * err);
                ei_sum += (neg * err) * (neg * err);
                ref_sum += *r;
            }
            let f_bal = (64.0 - ref_sum) / 64.0;
            let density = ref_sum / 64.0;
            let r = EdgeMap::new(Tensor::from_vec(rs, (8, 8), &dev()).unwrap()).unwrap();
            let g = EdgeMap::new(Tensor::from_vec(gs, (8, 8), &dev()).unwrap()).unwrap();
            let ep = scalar_f64(&edge_preservation_loss(&r, &g).unwrap()).unwrap();
            let ei = scalar_f64(&edge_introduction_loss(&r, &g).unwrap()).unwrap();
            assert!((ep - f_bal * ep_sum).abs() < 1e-7, "ep {ep} vs {}", f_bal * ep_sum);
            assert!((ei - density * ei_sum).abs() < 1e-7, "ei {ei} vs {}", density * ei_sum);
        }
    }

    #[test]
    fn edge_balance_monotonicity() {
        // Same masked error everywhere, denser reference -> strictly
        // smaller preservation loss.
        let make = |extra_edges: usize| {
            // One pixel the generator misses entirely plus `extra_edges`
            // reference edges the generator reproduces exactly.
            let mut r = vec![0.0f32; 16];
            let mut g = vec![0.0f32; 16];
            r[0] = 1.0;
            for i in 0..extra_edges {
                r[1 + i] = 1.0;
                g[1 + i] = 1.0;
            }
            let l = edge_preservation_loss(&edge(r, 4, 4), &edge(g, 4, 4)).unwrap();
            scalar_f64(&l).unwrap()
        };
        let mut prev = f64::INFINITY;
        for extra in 0..6 {
            let l = make(extra);
            assert!(l < prev, "loss did not shrink with density: {l} vs {prev}");
            prev = l;
        }
    }

    #[test]
    fn adversarial_losses_hit_their_anchors() {
        let ones = Tensor::ones((1, 1, 3, 3), DType::F32, &dev()).unwrap();
        let zeros = Tensor::zeros((1, 1, 3, 3), DType::F32, &dev()).unwrap();
        let g0 = adversarial_generator_loss(&ones).unwrap();
        assert_eq!(scalar_f64(&g0).unwrap(), 0.0);
        let g1 = adversarial_generator_loss(&zeros).unwrap();
        assert!((scalar_f64(&g1).unwrap() - 1.0).abs() < 1e-9);
        let d0 = adversarial_discriminator_loss(&ones, &zeros).unwrap();
        assert_eq!(scalar_f64(&d0).unwrap(), 0.0);
        let d1 = adversarial_discriminator_loss(&zeros, &ones).unwrap();
        assert!((scalar_f64(&d1).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adversarial_losses_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g_expect = xs.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / 30.0;
        let d_expect =
            0.5 * g_expect + 0.5 * ys.iter().map(|y| y.powi(2)).sum::<f64>() / 30.0;
        let xt = Tensor::from_vec(xs, (1, 1, 5, 6), &dev()).unwrap();
        let yt = Tensor::from_vec(ys, (1, 1, 5, 6), &dev()).unwrap();
        let g = scalar_f64(&adversarial_generator_loss(&xt).unwrap()).unwrap();
        let d = scalar_f64(&adversarial_discriminator_loss(&xt, &yt).unwrap()).unwrap();
        assert!((g - g_expect).abs() < 1e-9);
        assert!((d - d_expect).abs() < 1e-9);
    }

    #[test]
    fn total_objective_cycle_preset() {
        let cfg = builtin_config("cycle").unwrap();
        let comps = LossComponents {
            cyc_a: Some(0.3),
            cyc_b: Some(0.2),
            ..Default::default()
        };
        let report = total_objective(&comps, &cfg).unwrap();
        assert!((report.total - 5.0).abs() < 1e-12);
        assert!((report.recompute_total() - report.total).abs() < 1e-12);
    }

    #[test]
    fn total_objective_all_zero() {
        let cfg = builtin_config("cycle").unwrap();
        let comps = LossComponents {
            cyc_a: Some(0.0),
            cyc_b: Some(0.0),
            ..Default::default()
        };
        let report = total_objective(&comps, &cfg).unwrap();
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn total_objective_edge_preset() {
        let cfg = builtin_config("cycle+edge").unwrap();
        let mut comps = LossComponents {
            cyc_a: Some(0.0),
            cyc_b: Some(0.0),
            ..Default::default()
        };
        comps.edge_preservation.insert(PairTag::Afb, 0.01);
        comps.edge_preservation.insert(PairTag::Farb, 0.0);
        comps.edge_introduction.insert(PairTag::Bfa, 0.0);
        comps.edge_introduction.insert(PairTag::Fbra, 0.0);
        let report = total_objective(&comps, &cfg).unwrap();
        assert!((report.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_objective_names_missing_component() {
        let cfg = builtin_config("cycle+edge").unwrap();
        let comps = LossComponents {
            cyc_a: Some(0.0),
            cyc_b: Some(0.0),
            ..Default::default()
        };
        let err = total_objective(&comps, &cfg).unwrap_err();
        assert!(err.to_string().contains("lambda_ep_afb"), "{err}");
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let header = LossReport::csv_header();
        let report = LossReport::default();
        let row = report.csv_row();
        assert_eq!(header.split(',').count(), row.split(',').count());
    }
}
