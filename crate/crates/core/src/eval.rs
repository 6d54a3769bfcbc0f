//! Quantitative evaluation: per-image perceptual distance against paired
//! clean references, box-plot summaries and the cross-configuration
//! comparison report.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Device;
use image::{Rgb, RgbImage};

use crate::data::{image_to_tensor, load_image, PairedTestset};
use crate::error::{Error, Result};
use crate::extractors::{PerceptualExtractor, EVAL_STUB_SEED};
use crate::losses::{perceptual_distance, scalar_f64};
use crate::nets::Transformer;
use crate::tensor::ImageTensor;

/// The frozen metric extractor: multi-layer, equal weights, and a seed
/// distinct from anything used during training so the metric does not
/// trivially favor the trained objective.
pub fn eval_extractor(device: &Device) -> Result<PerceptualExtractor> {
    PerceptualExtractor::new(crate::config::PerceptualExtractorKind::MultiLayer, EVAL_STUB_SEED, device)
}

/// Runs an arbitrary enhancement function over a paired testset and
/// returns one `(pair_id, distance)` per pair, ordered by pair id.
pub fn evaluate_with(
    testset: &PairedTestset,
    extractor: &PerceptualExtractor,
    device: &Device,
    mut transform: impl FnMut(&ImageTensor) -> Result<ImageTensor>,
) -> Result<Vec<(String, f64)>> {
    if testset.pairs.is_empty() {
        return Err(Error::Dataset("testset has no pairs".into()));
    }
    let mut out = Vec::with_capacity(testset.pairs.len());
    for pair in &testset.pairs {
        let degraded = image_to_tensor(&load_image(&pair.degraded)?, device)?;
        let clean = image_to_tensor(&load_image(&pair.clean)?, device)?;
        let enhanced = transform(&degraded)?;
        let d = perceptual_distance(&extractor.extract(&enhanced)?, &extractor.extract(&clean)?)?;
        let d = scalar_f64(&d)?;
        if !(d >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "pair {}: distance {d} is not a nonnegative number",
                pair.pair_id
            )));
        }
        out.push((pair.pair_id.clone(), d));
    }
    Ok(out)
}

/// Distances of a trained transformer's outputs to the clean references.
pub fn evaluate_transformer(
    transformer: &Transformer,
    testset: &PairedTestset,
    extractor: &PerceptualExtractor,
    device: &Device,
) -> Result<Vec<(String, f64)>> {
    evaluate_with(testset, extractor, device, |img| transformer.transform(img))
}

/// Distances of the untransformed degraded inputs; the no-op baseline any
/// useful transformer has to beat.
pub fn baseline_distances(
    testset: &PairedTestset,
    extractor: &PerceptualExtractor,
    device: &Device,
) -> Result<Vec<(String, f64)>> {
    evaluate_with(testset, extractor, device, |img| Ok(img.clone()))
}

pub fn mean_distance(distances: &[(String, f64)]) -> f64 {
    distances.iter().map(|(_, d)| d).sum::<f64>() / distances.len() as f64
}

pub fn write_distances_csv(distances: &[(String, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("pair_id,distance\n");
    for (id, d) in distances {
        text.push_str(&format!("{id},{d}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Five-number summary with Tukey whiskers (1.5 * IQR rule, whiskers drawn
/// at the most extreme data points inside the fences).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation at rank `(n - 1) * p` of the sorted
/// sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn summarize_boxplot(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::InvalidValue("cannot summarize an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("sample contains non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (fence_low, fence_high) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted.iter().copied().filter(|v| *v >= fence_low && *v <= fence_high).collect();
    let whisker_low = *inside.first().unwrap_or(&q1);
    let whisker_high = *inside.last().unwrap_or(&q3);
    let outliers: Vec<f64> = sorted.iter().copied().filter(|v| *v < fence_low || *v > fence_high).collect();
    Ok(BoxStats {
        n: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Canonical presentation order of the four published configurations;
/// unknown names sort after them in input order.
fn canonical_rank(name: &str) -> usize {
    match name {
        "cycle+resnet" => 0,
        "edge+resnet" => 1,
        "edge+fcdensenet" => 2,
        "pdist+fcdensenet" => 3,
        _ => usize::MAX,
    }
}

/// Per-config distance lists, each entry `(config name, (pair_id,
/// distance) rows)`. All configs must have been evaluated on the same
/// testset.
pub type CompareInput = Vec<(String, Vec<(String, f64)>)>;

/// Writes `comparison.csv`, `boxstats.json` and `comparison.png` into
/// `out_dir`. Configs are presented in the canonical order above.
pub fn compare_report(results: &CompareInput, out_dir: impl AsRef<Path>) -> Result<BTreeMap<String, BoxStats>> {
    if results.len() < 2 {
        return Err(Error::InvalidValue("comparison needs at least two configurations".into()));
    }
    let reference_ids: Vec<&String> = results[0].1.iter().map(|(id, _)| id).collect();
    for (name, rows) in results {
        let ids: Vec<&String> = rows.iter().map(|(id, _)| id).collect();
        if ids != reference_ids {
            return Err(Error::InvalidValue(format!(
                "config `{name}` was evaluated on a different testset (pair ids differ)"
            )));
        }
    }
    let mut ordered: Vec<usize> = (0..results.len()).collect();
    ordered.sort_by_key(|i| (canonical_rank(&results[*i].0), *i));

    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut stats = BTreeMap::new();
    let mut csv = String::from("config,n,mean,median,q1,q3,whisker_low,whisker_high,outlier_count\n");
    let mut plot_rows = Vec::new();
    for &i in &ordered {
        let (name, rows) = &results[i];
        let values: Vec<f64> = rows.iter().map(|(_, d)| *d).collect();
        let s = summarize_boxplot(&values)?;
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{}\n",
            s.n, s.mean, s.median, s.q1, s.q3, s.whisker_low, s.whisker_high,
            s.outliers.len()
        ));
        plot_rows.push((name.clone(), s.clone()));
        stats.insert(name.clone(), s);
    }
    std::fs::write(out_dir.join("comparison.csv"), csv)?;
    std::fs::write(out_dir.join("boxstats.json"), serde_json::to_string_pretty(&stats).unwrap())?;
    render_boxplot(&plot_rows, &out_dir.join("comparison.png"))?;
    Ok(stats)
}

fn render_boxplot(rows: &[(String, BoxStats)], path: &Path) -> Result<()> {
    let (w, h) = (120 * rows.len() as u32 + 60, 320u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (top, bottom) = (20u32, h - 30);
    let lo = rows
        .iter()
        .map(|(_, s)| s.outliers.iter().copied().fold(s.whisker_low, f64::min))
        .fold(f64::INFINITY, f64::min);
    let hi = rows
        .iter()
        .map(|(_, s)| s.outliers.iter().copied().fold(s.whisker_high, f64::max))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y_of = |v: f64| -> u32 {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        bottom - ((bottom - top) as f64 * t) as u32
    };
    let hline = |img: &mut RgbImage, x0: u32, x1: u32, y: u32, c: Rgb<u8>| {
        for x in x0..=x1.min(w - 1) {
            img.put_pixel(x, y.min(h - 1), c);
        }
    };
    let vline = |img: &mut RgbImage, x: u32, y0: u32, y1: u32, c: Rgb<u8>| {
        for y in y0..=y1.min(h - 1) {
            img.put_pixel(x.min(w - 1), y, c);
        }
    };
    let black = Rgb([0, 0, 0]);
    let blue = Rgb([40, 80, 200]);
    // Axis.
    vline(&mut img, 40, top, bottom, black);
    hline(&mut img, 40, w - 10, bottom, black);
    for (i, (_, s)) in rows.iter().enumerate() {
        let cx = 60 + 120 * i as u32 + 40;
        let (bl, br) = (cx - 30, cx + 30);
        let (yq1, yq3) = (y_of(s.q1), y_of(s.q3));
        let (ymed, ywl, ywh) = (y_of(s.median), y_of(s.whisker_low), y_of(s.whisker_high));
        // Box, median, whiskers, caps.
        hline(&mut img, bl, br, yq1, blue);
        hline(&mut img, bl, br, yq3, blue);
        vline(&mut img, bl, yq3, yq1, blue);
        vline(&mut img, br, yq3, yq1, blue);
        hline(&mut img, bl, br, ymed, black);
        vline(&mut img, cx, ywh, yq3, black);
        vline(&mut img, cx, yq1, ywl, black);
        hline(&mut img, cx - 12, cx + 12, ywh, black);
        hline(&mut img, cx - 12, cx + 12, ywl, black);
        for o in &s.outliers {
            let y = y_of(*o);
            hline(&mut img, cx - 1, cx + 1, y, black);
        }
    }
    img.save(path).map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))?;
    Ok(())
}
