//! COCO-style box evaluation.
//!
//! Follows the reference evaluator's semantics: greedy per-image matching in
//! descending score order, ignore flags for out-of-bucket boxes, 101-point
//! interpolated precision with a right-to-left envelope, and `-1` for
//! categories without ground truth. Threshold grids reproduce `linspace`
//! bit for bit. Size buckets use half-open ranges: small `[0, 32²)`,
//! medium `[32², 96²)`, large `[96², ∞)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, MEDIUM_MAX_AREA, SMALL_MAX_AREA};
use crate::manifest_io::{decode_json, ManifestError};
use crate::model::{BBox, DatasetManifest, ImageId};

/// Number of IoU thresholds (0.50:0.05:0.95).
pub const N_IOU: usize = 10;
/// Number of recall sample points (0:0.01:1).
pub const N_REC: usize = 101;
pub const MAX_DETS: [usize; 2] = [10, 100];
/// Metric value for a category or bucket without ground truth.
pub const SENTINEL: f64 = -1.0;

/// `n` evenly spaced values from `start` to `stop`, computed as `start + i * step`
/// with the final value pinned to `stop`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

pub fn iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, N_IOU)
}

pub fn recall_thresholds() -> Vec<f64> {
    linspace(0.0, 1.0, N_REC)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn bounds(self) -> (f64, f64) {
        match self {
            AreaRange::All => (0.0, f64::INFINITY),
            AreaRange::Small => (0.0, SMALL_MAX_AREA),
            AreaRange::Medium => (SMALL_MAX_AREA, MEDIUM_MAX_AREA),
            AreaRange::Large => (MEDIUM_MAX_AREA, f64::INFINITY),
        }
    }

    pub fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.bounds();
        area >= lo && area < hi
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Load(#[from] ManifestError),
    #[error("detection {entry}: category {category_id} is not in the registry")]
    CategoryMismatch { entry: usize, category_id: u32 },
    #[error("detection {entry}: image {image_id} is not in the ground truth")]
    UnknownImage { entry: usize, image_id: ImageId },
    #[error("detection {entry}: score {score} outside [0, 1]")]
    InvalidScore { entry: usize, score: f64 },
}

/// One scored prediction in the common detection-results layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub image_id: ImageId,
    pub bbox: BBox,
    pub category_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionDump {
    pub entries: Vec<DumpEntry>,
}

pub fn load_dump(path: impl AsRef<Path>) -> Result<DetectionDump, MetricsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    Ok(decode_json(&text, path)?)
}

/// Greedy matching of score-sorted detections against non-ignored ground truth.
/// Returns, per detection, the index of the ground-truth box it claimed.
pub fn match_detections(gt: &[BBox], dets: &[BBox], iou_threshold: f64) -> Vec<Option<usize>> {
    let ignore = vec![false; gt.len()];
    let ious: Vec<Vec<f64>> = dets.iter().map(|d| gt.iter().map(|g| iou(d, g)).collect()).collect();
    greedy_match(&ious, &ignore, iou_threshold).into_iter().map(|m| m.map(|(g, _)| g)).collect()
}

/// Reference greedy rule. `gt_ignore` must list non-ignored boxes first.
/// Each entry is `(gt index, gt ignored)` for a matched detection.
fn greedy_match(ious: &[Vec<f64>], gt_ignore: &[bool], t: f64) -> Vec<Option<(usize, bool)>> {
    let mut gt_taken = vec![false; gt_ignore.len()];
    let mut out = Vec::with_capacity(ious.len());
    for row in ious {
        let mut best = t.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for (g, &v) in row.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            if let Some(mi) = m {
                if !gt_ignore[mi] && gt_ignore[g] {
                    break;
                }
            }
            if v < best {
                continue;
            }
            best = v;
            m = Some(g);
        }
        if let Some(g) = m {
            gt_taken[g] = true;
        }
        out.push(m.map(|g| (g, gt_ignore[g])));
    }
    out
}

/// Interpolated precision at the 101 recall points for one ranked list.
/// `ranked` holds `(is_tp)` for non-ignored detections in score order.
pub fn precision_at_recalls(ranked: &[bool], n_gt: usize) -> [f64; N_REC] {
    let mut q = [0.0; N_REC];
    if n_gt == 0 || ranked.is_empty() {
        return q;
    }
    let mut rc = Vec::with_capacity(ranked.len());
    let mut pr = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    for &hit in ranked {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        rc.push(tp / n_gt as f64);
        // Ignored detections are already filtered out, so the denominator is at least 1.
        pr.push(tp / (tp + fp));
    }
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    for (r, thr) in recall_thresholds().into_iter().enumerate() {
        let idx = rc.partition_point(|&v| v < thr);
        if idx >= pr.len() {
            break;
        }
        q[r] = pr[idx];
    }
    q
}

/// 101-point AP for one ranked list; [`SENTINEL`] when there is no ground truth.
pub fn average_precision(ranked: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return SENTINEL;
    }
    precision_at_recalls(ranked, n_gt).iter().sum::<f64>() / N_REC as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub ap50_95: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_s: f64,
    pub ap_m: f64,
    pub ap_l: f64,
    pub ar_10: f64,
    pub ar_100: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 8] {
        [self.ap50_95, self.ap50, self.ap75, self.ap_s, self.ap_m, self.ap_l, self.ar_10, self.ar_100]
    }

    fn from_values(v: [f64; 8]) -> Self {
        Self { ap50_95: v[0], ap50: v[1], ap75: v[2], ap_s: v[3], ap_m: v[4], ap_l: v[5], ar_10: v[6], ar_100: v[7] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category_id: u32,
    pub name: String,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_agnostic: bool,
    pub images: usize,
    pub ground_truth: usize,
    pub detections: usize,
    pub per_category: Vec<CategoryMetrics>,
    /// Mean over categories of each column, skipping sentinels.
    pub overall: MetricRow,
    /// Mean AP50..95 over ID classes with ground truth.
    pub map_id: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub class_agnostic: bool,
}

/// Matching result for one (image, category, area range).
struct ImageEval {
    scores: Vec<f64>,
    matched: Vec<[bool; N_IOU]>,
    ignored: Vec<[bool; N_IOU]>,
    n_pos: usize,
}

fn evaluate_image(gt: &[BBox], dts: &[(BBox, f64)], range: AreaRange, thresholds: &[f64]) -> Option<ImageEval> {
    if gt.is_empty() && dts.is_empty() {
        return None;
    }
    let mut gt_sorted: Vec<(BBox, bool)> = gt.iter().map(|g| (*g, !range.contains(g.area()))).collect();
    gt_sorted.sort_by_key(|g| g.1);
    let gt_ignore: Vec<bool> = gt_sorted.iter().map(|g| g.1).collect();
    let ious: Vec<Vec<f64>> = dts.iter().map(|(d, _)| gt_sorted.iter().map(|(g, _)| iou(d, g)).collect()).collect();
    let mut matched = vec![[false; N_IOU]; dts.len()];
    let mut ignored = vec![[false; N_IOU]; dts.len()];
    for (t, &thr) in thresholds.iter().enumerate() {
        for (d, m) in greedy_match(&ious, &gt_ignore, thr).into_iter().enumerate() {
            match m {
                Some((_, gt_ig)) => {
                    matched[d][t] = true;
                    ignored[d][t] = gt_ig;
                }
                None => ignored[d][t] = !range.contains(dts[d].0.area()),
            }
        }
    }
    Some(ImageEval {
        scores: dts.iter().map(|d| d.1).collect(),
        matched,
        ignored,
        n_pos: gt_ignore.iter().filter(|&&i| !i).count(),
    })
}

/// Precision grid (per threshold) and final recall (per threshold) for one
/// category, area range and detection cap; `None` when there is no ground truth.
fn accumulate(evals: &[&ImageEval], max_det: usize) -> Option<(Vec<[f64; N_REC]>, [f64; N_IOU])> {
    let n_pos: usize = evals.iter().map(|e| e.n_pos).sum();
    if evals.is_empty() || n_pos == 0 {
        return None;
    }
    let mut pooled: Vec<(f64, &[bool; N_IOU], &[bool; N_IOU])> = Vec::new();
    for e in evals {
        let k = e.scores.len().min(max_det);
        for d in 0..k {
            pooled.push((e.scores[d], &e.matched[d], &e.ignored[d]));
        }
    }
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
    let mut precision = Vec::with_capacity(N_IOU);
    let mut recall = [0.0; N_IOU];
    for t in 0..N_IOU {
        let ranked: Vec<bool> = pooled.iter().filter(|p| !p.2[t]).map(|p| p.1[t]).collect();
        let tp = ranked.iter().filter(|&&h| h).count();
        recall[t] = if ranked.is_empty() { 0.0 } else { tp as f64 / n_pos as f64 };
        precision.push(precision_at_recalls(&ranked, n_pos));
    }
    Some((precision, recall))
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        SENTINEL
    } else {
        sum / n as f64
    }
}

fn mean_valid(values: impl IntoIterator<Item = f64>) -> f64 {
    mean(values.into_iter().filter(|&v| v > SENTINEL))
}

#[derive(Default)]
struct PerImage {
    gt: Vec<BBox>,
    dts: Vec<(BBox, f64)>,
}

fn category_metrics(cells: &[(ImageId, &PerImage)], thresholds: &[f64]) -> MetricRow {
    let mut by_range: BTreeMap<usize, Vec<ImageEval>> = BTreeMap::new();
    for (ri, range) in AreaRange::ALL.iter().enumerate() {
        let evals = cells.iter().filter_map(|(_, c)| evaluate_image(&c.gt, &c.dts, *range, thresholds)).collect();
        by_range.insert(ri, evals);
    }
    let acc = |ri: usize, max_det: usize| {
        let evals: Vec<&ImageEval> = by_range[&ri].iter().collect();
        accumulate(&evals, max_det)
    };
    let ap_of = |grid: &Option<(Vec<[f64; N_REC]>, [f64; N_IOU])>, t: Option<usize>| match grid {
        None => SENTINEL,
        Some((prec, _)) => match t {
            Some(t) => mean(prec[t].iter().copied()),
            None => mean(prec.iter().flat_map(|q| q.iter().copied())),
        },
    };
    let ar_of = |grid: &Option<(Vec<[f64; N_REC]>, [f64; N_IOU])>| match grid {
        None => SENTINEL,
        Some((_, rec)) => mean(rec.iter().copied()),
    };
    let all100 = acc(0, 100);
    let all10 = acc(0, 10);
    let t75 = thresholds.iter().position(|&t| t == 0.75).expect("0.75 on the grid");
    MetricRow {
        ap50_95: ap_of(&all100, None),
        ap50: ap_of(&all100, Some(0)),
        ap75: ap_of(&all100, Some(t75)),
        ap_s: ap_of(&acc(1, 100), None),
        ap_m: ap_of(&acc(2, 100), None),
        ap_l: ap_of(&acc(3, 100), None),
        ar_10: ar_of(&all10),
        ar_100: ar_of(&all100),
    }
}

/// Scores a detection dump against a manifest's non-removed annotations.
pub fn evaluate(gt: &DatasetManifest, dump: &DetectionDump, opts: EvalOptions) -> Result<EvalReport, MetricsError> {
    let registry = &gt.registry;
    let image_ids: BTreeMap<ImageId, ()> = gt.images.iter().map(|im| (im.id, ())).collect();
    for (i, e) in dump.entries.iter().enumerate() {
        if !registry.is_valid_index(e.category_id) {
            return Err(MetricsError::CategoryMismatch { entry: i, category_id: e.category_id });
        }
        if !image_ids.contains_key(&e.image_id) {
            return Err(MetricsError::UnknownImage { entry: i, image_id: e.image_id });
        }
        if !(0.0..=1.0).contains(&e.score) {
            return Err(MetricsError::InvalidScore { entry: i, score: e.score });
        }
    }
    let category_of = |c: u32| if opts.class_agnostic { 1 } else { c };
    let categories: Vec<(u32, String)> = if opts.class_agnostic {
        vec![(1, "object".to_string())]
    } else {
        registry.categories().map(|(i, n)| (i, n.to_string())).collect()
    };

    // (category, image) cells; images iterate in ascending id order.
    let mut cells: BTreeMap<u32, BTreeMap<ImageId, PerImage>> = BTreeMap::new();
    let mut n_gt = 0;
    for a in gt.annotations.iter().filter(|a| !a.is_removed()) {
        cells.entry(category_of(a.category_index)).or_default().entry(a.image_id).or_default().gt.push(a.bbox);
        n_gt += 1;
    }
    for e in &dump.entries {
        let cell = cells.entry(category_of(e.category_id)).or_default().entry(e.image_id).or_default();
        cell.dts.push((e.bbox, e.score));
    }
    for per_cat in cells.values_mut() {
        for cell in per_cat.values_mut() {
            cell.dts.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
            cell.dts.truncate(MAX_DETS[1]);
        }
    }

    let thresholds = iou_thresholds();
    let empty = BTreeMap::new();
    let per_category: Vec<CategoryMetrics> = categories
        .par_iter()
        .map(|(id, name)| {
            let cat_cells: Vec<(ImageId, &PerImage)> =
                cells.get(id).unwrap_or(&empty).iter().map(|(k, v)| (*k, v)).collect();
            CategoryMetrics { category_id: *id, name: name.clone(), metrics: category_metrics(&cat_cells, &thresholds) }
        })
        .collect();

    let mut overall = [0.0; 8];
    for (c, slot) in overall.iter_mut().enumerate() {
        *slot = mean_valid(per_category.iter().map(|m| m.metrics.values()[c]));
    }
    let map_id = if opts.class_agnostic {
        per_category[0].metrics.ap50_95
    } else {
        mean_valid(per_category.iter().filter(|m| registry.is_id_index(m.category_id)).map(|m| m.metrics.ap50_95))
    };
    Ok(EvalReport {
        class_agnostic: opts.class_agnostic,
        images: gt.images.len(),
        ground_truth: n_gt,
        detections: dump.entries.len(),
        per_category,
        overall: MetricRow::from_values(overall),
        map_id,
    })
}

/// Plain-text table, values in percent; `-` marks categories without ground truth.
pub fn render_table(report: &EvalReport) -> String {
    let header = ["AP50..95", "AP50", "AP75", "APS", "APM", "APL", "AR10", "AR100"];
    let width = report.per_category.iter().map(|c| c.name.len()).max().unwrap_or(0).max(8);
    let cell = |v: f64| if v <= SENTINEL { "-".to_string() } else { format!("{:.1}", v * 100.0) };
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "class");
    for h in header {
        let _ = write!(out, " {h:>8}");
    }
    out.push('\n');
    let mut row = |name: &str, m: &MetricRow| {
        let _ = write!(out, "{name:<width$}");
        for v in m.values() {
            let _ = write!(out, " {:>8}", cell(v));
        }
        out.push('\n');
    };
    for c in &report.per_category {
        row(&c.name, &c.metrics);
    }
    row("all", &report.overall);
    let _ = writeln!(out, "mAP (ID classes): {}", cell(report.map_id));
    out
}
