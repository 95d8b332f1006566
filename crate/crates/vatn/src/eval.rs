//! Detection scoring: hit matching, FROC curves, and the CPM summary.

use crate::boxes::{Cube, DetectionBox};
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// The seven reference false-positive rates per scan.
pub const FP_RATES: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionStatus {
    TruePositive,
    FalsePositive,
    /// Within the radius of an irrelevant finding: counted neither way.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Status per detection, aligned with the input order.
    pub statuses: Vec<DetectionStatus>,
    /// Hit flag per ground-truth nodule.
    pub gt_hit: Vec<bool>,
}

/// Classify each detection against one scan's annotations.
///
/// A detection whose center lies within the radius (`d/2`) of a not-yet-hit
/// ground truth becomes its true positive; claims go to the nearest such
/// nodule and are handed out in descending score order, so each ground
/// truth absorbs at most one detection. Unclaimed detections inside an
/// irrelevant finding's radius are ignored; everything else is a false
/// positive.
pub fn hit_match(
    detections: &[DetectionBox],
    gt_nodules: &[Cube],
    irrelevant: &[Cube],
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut statuses = vec![DetectionStatus::FalsePositive; detections.len()];
    let mut gt_hit = vec![false; gt_nodules.len()];
    for &i in &order {
        let det = detections[i].cube();
        let mut claim: Option<(usize, f64)> = None;
        for (gi, gt) in gt_nodules.iter().enumerate() {
            if gt_hit[gi] {
                continue;
            }
            let dist = det.center_distance(gt);
            if dist <= gt.d / 2.0 && claim.map_or(true, |(_, best)| dist < best) {
                claim = Some((gi, dist));
            }
        }
        if let Some((gi, _)) = claim {
            gt_hit[gi] = true;
            statuses[i] = DetectionStatus::TruePositive;
        } else if irrelevant
            .iter()
            .any(|irr| det.center_distance(irr) <= irr.d / 2.0)
        {
            statuses[i] = DetectionStatus::Ignored;
        }
    }
    MatchResult { statuses, gt_hit }
}

/// One scan's scored, classified detections plus its ground-truth count.
#[derive(Debug, Clone, Default)]
pub struct ScanMatches {
    pub scored: Vec<(f64, DetectionStatus)>,
    pub n_gt: usize,
}

impl ScanMatches {
    pub fn from_match(detections: &[DetectionBox], matched: &MatchResult) -> Self {
        Self {
            scored: detections
                .iter()
                .zip(&matched.statuses)
                .map(|(d, &s)| (d.score, s))
                .collect(),
            n_gt: matched.gt_hit.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrocResult {
    /// `(fp_per_scan, sensitivity)` at every distinct score threshold,
    /// ordered by increasing false-positive rate.
    pub curve: Vec<(f64, f64)>,
    /// Sensitivities interpolated at [`FP_RATES`].
    pub seven_point: [f64; 7],
    /// Mean of the seven sensitivities.
    pub cpm: f64,
}

/// Sweep the decision threshold over every distinct detection score and
/// compute the free-response curve, then interpolate the seven reference
/// rates linearly (clamped at the curve endpoints).
pub fn froc(scans: &[ScanMatches]) -> Result<FrocResult> {
    if scans.is_empty() {
        return Err(Error::data("froc needs at least one scan"));
    }
    let n_scans = scans.len() as f64;
    let total_gt: usize = scans.iter().map(|s| s.n_gt).sum();
    if total_gt == 0 {
        return Err(Error::data("froc needs at least one ground-truth nodule"));
    }

    let mut events: Vec<(f64, DetectionStatus)> = scans
        .iter()
        .flat_map(|s| s.scored.iter().copied())
        .filter(|(_, st)| *st != DetectionStatus::Ignored)
        .collect();
    events.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    // cumulative counts at each distinct threshold, descending
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < events.len() {
        let threshold = events[i].0;
        while i < events.len() && events[i].0 == threshold {
            match events[i].1 {
                DetectionStatus::TruePositive => tp += 1,
                DetectionStatus::FalsePositive => fp += 1,
                DetectionStatus::Ignored => {}
            }
            i += 1;
        }
        let point = (fp as f64 / n_scans, tp as f64 / total_gt as f64);
        // equal fp rates collapse to their best sensitivity
        match curve.last_mut() {
            Some(last) if last.0 == point.0 => last.1 = point.1,
            _ => curve.push(point),
        }
    }

    let seven_point = interpolate_rates(&curve);
    let cpm = seven_point.iter().sum::<f64>() / 7.0;
    Ok(FrocResult {
        curve,
        seven_point,
        cpm,
    })
}

fn interpolate_rates(curve: &[(f64, f64)]) -> [f64; 7] {
    let mut out = [0.0; 7];
    if curve.is_empty() {
        return out;
    }
    for (k, &rate) in FP_RATES.iter().enumerate() {
        out[k] = if rate <= curve[0].0 {
            curve[0].1
        } else if rate >= curve[curve.len() - 1].0 {
            curve[curve.len() - 1].1
        } else {
            let mut v = curve[curve.len() - 1].1;
            for win in curve.windows(2) {
                let (x0, y0) = win[0];
                let (x1, y1) = win[1];
                if rate >= x0 && rate <= x1 {
                    v = if x1 == x0 {
                        y1
                    } else {
                        y0 + (y1 - y0) * (rate - x0) / (x1 - x0)
                    };
                    break;
                }
            }
            v
        };
    }
    out
}

/// Serialize the full curve plus the seven-point block and the CPM, all at
/// six decimal places.
pub fn export_froc_csv(result: &FrocResult, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("fp_per_scan,sensitivity\n");
    for &(fp, sens) in &result.curve {
        out.push_str(&format!("{fp:.6},{sens:.6}\n"));
    }
    out.push_str("target_fp_per_scan,sensitivity\n");
    for (k, &rate) in FP_RATES.iter().enumerate() {
        out.push_str(&format!("{rate:.6},{:.6}\n", result.seven_point[k]));
    }
    out.push_str(&format!("cpm,{:.6}\n", result.cpm));
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parse a file written by [`export_froc_csv`].
pub fn parse_froc_csv(path: &Path) -> Result<FrocResult> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty froc csv"))?;
    if header != "fp_per_scan,sensitivity" {
        return Err(Error::data(format!("unexpected froc header '{header}'")));
    }
    let mut curve = Vec::new();
    let mut seven = Vec::new();
    let mut cpm = None;
    let mut in_targets = false;
    for line in lines {
        if line == "target_fp_per_scan,sensitivity" {
            in_targets = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix("cpm,") {
            cpm = Some(
                rest.parse::<f64>()
                    .map_err(|e| Error::data(format!("bad cpm value: {e}")))?,
            );
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::data(format!("bad froc row '{line}'")))?;
        let pair = (
            a.parse::<f64>()
                .map_err(|e| Error::data(format!("bad froc value: {e}")))?,
            b.parse::<f64>()
                .map_err(|e| Error::data(format!("bad froc value: {e}")))?,
        );
        if in_targets {
            seven.push(pair.1);
        } else {
            curve.push(pair);
        }
    }
    if seven.len() != 7 {
        return Err(Error::data(format!(
            "expected 7 target rows, found {}",
            seven.len()
        )));
    }
    Ok(FrocResult {
        curve,
        seven_point: seven.try_into().expect("length checked"),
        cpm: cpm.ok_or_else(|| Error::data("missing cpm row"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(z: f64, score: f64) -> DetectionBox {
        DetectionBox::new(z, 10.0, 10.0, 4.0, score)
    }

    #[test]
    fn hit_criterion_radius() {
        let gt = vec![Cube::new(10.0, 10.0, 10.0, 10.0)]; // radius 5
        let inside = vec![DetectionBox::new(13.0, 10.0, 10.0, 4.0, 0.9)];
        let outside = vec![DetectionBox::new(16.0, 10.0, 10.0, 4.0, 0.9)];
        let m_in = hit_match(&inside, &gt, &[]);
        assert_eq!(m_in.statuses[0], DetectionStatus::TruePositive);
        let m_out = hit_match(&outside, &gt, &[]);
        assert_eq!(m_out.statuses[0], DetectionStatus::FalsePositive);
    }

    #[test]
    fn one_hit_per_gt() {
        let gt = vec![Cube::new(10.0, 10.0, 10.0, 10.0)];
        let dets = vec![
            DetectionBox::new(11.0, 10.0, 10.0, 4.0, 0.8),
            DetectionBox::new(10.0, 10.0, 10.0, 4.0, 0.9),
        ];
        let m = hit_match(&dets, &gt, &[]);
        // the higher score claims the nodule, the other becomes FP
        assert_eq!(m.statuses[1], DetectionStatus::TruePositive);
        assert_eq!(m.statuses[0], DetectionStatus::FalsePositive);
        assert_eq!(m.gt_hit, vec![true]);
    }

    #[test]
    fn irrelevant_findings_are_ignored() {
        let gt = vec![Cube::new(50.0, 50.0, 50.0, 6.0)];
        let irr = vec![Cube::new(10.0, 10.0, 10.0, 8.0)];
        let dets = vec![det(10.0, 0.7)];
        let m = hit_match(&dets, &gt, &irr);
        assert_eq!(m.statuses[0], DetectionStatus::Ignored);
    }

    #[test]
    fn perfect_detection_gives_cpm_one() {
        let scans = vec![ScanMatches {
            scored: vec![(1.0, DetectionStatus::TruePositive), (1.0, DetectionStatus::TruePositive)],
            n_gt: 2,
        }];
        let r = froc(&scans).unwrap();
        assert_eq!(r.seven_point, [1.0; 7]);
        assert_eq!(r.cpm, 1.0);
    }

    #[test]
    fn no_detections_gives_zero() {
        let scans = vec![ScanMatches {
            scored: vec![],
            n_gt: 3,
        }];
        let r = froc(&scans).unwrap();
        assert_eq!(r.seven_point, [0.0; 7]);
        assert_eq!(r.cpm, 0.0);
    }

    #[test]
    fn zero_gt_is_an_error() {
        let scans = vec![ScanMatches {
            scored: vec![(0.5, DetectionStatus::FalsePositive)],
            n_gt: 0,
        }];
        assert!(froc(&scans).is_err());
    }

    #[test]
    fn curve_is_monotone() {
        let scans = vec![ScanMatches {
            scored: vec![
                (0.9, DetectionStatus::TruePositive),
                (0.8, DetectionStatus::FalsePositive),
                (0.7, DetectionStatus::TruePositive),
                (0.6, DetectionStatus::FalsePositive),
                (0.5, DetectionStatus::FalsePositive),
                (0.4, DetectionStatus::TruePositive),
            ],
            n_gt: 4,
        }];
        let r = froc(&scans).unwrap();
        for win in r.curve.windows(2) {
            assert!(win[1].0 > win[0].0, "fp rates strictly increase");
            assert!(win[1].1 >= win[0].1, "sensitivity never decreases");
        }
    }

    #[test]
    fn csv_round_trip_and_stability() {
        let scans = vec![ScanMatches {
            scored: vec![
                (0.9, DetectionStatus::TruePositive),
                (0.5, DetectionStatus::FalsePositive),
            ],
            n_gt: 1,
        }];
        let r = froc(&scans).unwrap();
        let dir = std::env::temp_dir().join(format!("vatn-froc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.csv");
        let p2 = dir.join("b.csv");
        export_froc_csv(&r, &p1).unwrap();
        export_froc_csv(&r, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let back = parse_froc_csv(&p1).unwrap();
        assert_eq!(back.curve.len(), r.curve.len());
        assert!((back.cpm - r.cpm).abs() < 1e-9);
        std::fs::remove_dir_all(&dir).ok();
    }
}
