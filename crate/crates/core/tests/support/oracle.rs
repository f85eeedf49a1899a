//! Brute-force reference for COCO-style box evaluation, written from the
//! evaluation definition rather than from the library code.
//!
//! Per (category, area range, IoU threshold, detection cap):
//! detections of each image are ranked by score (input order breaks ties) and
//! capped at 100; each claims the unclaimed ground-truth box with the highest
//! IoU at or above the threshold, preferring boxes inside the area range, with
//! later boxes winning exact ties. Claims on out-of-range boxes, and unmatched
//! detections that are themselves out of range, are dropped. The survivors of
//! every image (first `cap` per image) are pooled by score, images in id order.
//! Interpolated precision at recall r is the best precision at any rank whose
//! recall reaches r, 0 if none does.
#![allow(dead_code)]

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl OBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone)]
pub struct OGt {
    pub image: u64,
    pub category: u32,
    pub bbox: OBox,
}

#[derive(Debug, Clone)]
pub struct ODet {
    pub image: u64,
    pub category: u32,
    pub bbox: OBox,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub images: Vec<u64>,
    /// ID class count; the OOD class is `n_id + 1`.
    pub n_id: u32,
    pub gts: Vec<OGt>,
    pub dets: Vec<ODet>,
}

fn grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    // numpy.linspace: start + i * step, last point exactly `stop`.
    let step = (stop - start) / (n as f64 - 1.0);
    (0..n).map(|i| if i == n - 1 { stop } else { start + step * i as f64 }).collect()
}

fn overlap(a: &OBox, b: &OBox) -> f64 {
    let x0 = a.x.max(b.x);
    let y0 = a.y.max(b.y);
    let x1 = (a.x + a.w).min(b.x + b.w);
    let y1 = (a.y + a.h).min(b.y + b.h);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let inter = (x1 - x0) * (y1 - y0);
    inter / (a.area() + b.area() - inter)
}

fn in_range(area: f64, range: usize) -> bool {
    match range {
        0 => true,
        1 => area < 32.0 * 32.0,
        2 => (32.0 * 32.0..96.0 * 96.0).contains(&area),
        _ => area >= 96.0 * 96.0,
    }
}

/// Per detection of one image: Some(true) = true positive, Some(false) = false
/// positive, None = dropped.
fn label_image(gts: &[OBox], dets: &[OBox], range: usize, thr: f64) -> Vec<Option<bool>> {
    let floor = thr.min(1.0 - 1e-10);
    let mut claimed = vec![false; gts.len()];
    let mut out = Vec::new();
    for d in dets {
        let pick = |want_in_range: bool, claimed: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in gts.iter().enumerate() {
                if claimed[g] || in_range(gb.area(), range) != want_in_range {
                    continue;
                }
                let v = overlap(d, gb);
                if v >= floor && best.is_none_or(|(_, b)| v >= b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| g)
        };
        if let Some(g) = pick(true, &claimed) {
            claimed[g] = true;
            out.push(Some(true));
        } else if let Some(g) = pick(false, &claimed) {
            claimed[g] = true;
            out.push(None);
        } else if in_range(d.area(), range) {
            out.push(Some(false));
        } else {
            out.push(None);
        }
    }
    out
}

struct Curve {
    /// Precision at each of the 101 recall points.
    interp: Vec<f64>,
    recall: f64,
}

fn curve(labels: &[bool], n_pos: usize) -> Curve {
    let mut pts = Vec::new();
    let mut tp = 0usize;
    for (i, &hit) in labels.iter().enumerate() {
        tp += hit as usize;
        pts.push((tp as f64 / n_pos as f64, tp as f64 / (i + 1) as f64));
    }
    let interp = grid(0.0, 1.0, 101)
        .into_iter()
        .map(|r| pts.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max))
        .collect();
    Curve { interp, recall: if labels.is_empty() { 0.0 } else { tp as f64 / n_pos as f64 } }
}

/// `[AP50..95, AP50, AP75, AP_S, AP_M, AP_L, AR_10, AR_100]` per category
/// (ID classes then OOD), -1 where there is no ground truth.
pub fn per_category(inst: &Instance, class_agnostic: bool) -> Vec<[f64; 8]> {
    let cat = |c: u32| if class_agnostic { 1 } else { c };
    let cats: Vec<u32> = if class_agnostic { vec![1] } else { (1..=inst.n_id + 1).collect() };
    let thresholds = grid(0.5, 0.95, 10);
    let mut images = inst.images.clone();
    images.sort();
    let mut rows = Vec::new();
    for &c in &cats {
        // (range, cap) -> per threshold: Some((precision curve, recall)) or None.
        let run = |range: usize, cap: usize| -> Option<Vec<Curve>> {
            let mut per_thr = Vec::new();
            let mut seen_any = false;
            let mut n_pos_total = 0;
            for &thr in &thresholds {
                let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
                let mut n_pos = 0;
                for (ii, &img) in images.iter().enumerate() {
                    let g: Vec<OBox> =
                        inst.gts.iter().filter(|x| x.image == img && cat(x.category) == c).map(|x| x.bbox).collect();
                    let mut d: Vec<(usize, &ODet)> =
                        inst.dets.iter().filter(|x| x.image == img && cat(x.category) == c).enumerate().collect();
                    if g.is_empty() && d.is_empty() {
                        continue;
                    }
                    seen_any = true;
                    d.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
                    d.truncate(100);
                    let boxes: Vec<OBox> = d.iter().map(|x| x.1.bbox).collect();
                    n_pos += g.iter().filter(|b| in_range(b.area(), range)).count();
                    let labels = label_image(&g, &boxes, range, thr);
                    for (k, lab) in labels.into_iter().enumerate().take(cap) {
                        if let Some(hit) = lab {
                            pooled.push((d[k].1.score, ii, k, hit));
                        }
                    }
                }
                pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                n_pos_total = n_pos;
                let labels: Vec<bool> = pooled.iter().map(|p| p.3).collect();
                per_thr.push(if n_pos == 0 { None } else { Some(curve(&labels, n_pos)) });
            }
            if !seen_any || n_pos_total == 0 {
                return None;
            }
            Some(per_thr.into_iter().map(|c| c.expect("n_pos does not depend on the threshold")).collect())
        };
        let ap = |curves: &Option<Vec<Curve>>, which: &[usize]| match curves {
            None => -1.0,
            Some(cs) => {
                let vals: Vec<f64> = which.iter().flat_map(|&t| cs[t].interp.iter().copied()).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let ar = |curves: &Option<Vec<Curve>>| match curves {
            None => -1.0,
            Some(cs) => cs.iter().map(|c| c.recall).sum::<f64>() / cs.len() as f64,
        };
        let all: Vec<usize> = (0..10).collect();
        let a100 = run(0, 100);
        rows.push([
            ap(&a100, &all),
            ap(&a100, &[0]),
            ap(&a100, &[5]),
            ap(&run(1, 100), &all),
            ap(&run(2, 100), &all),
            ap(&run(3, 100), &all),
            ar(&run(0, 10)),
            ar(&a100),
        ]);
    }
    rows
}
