//! Post-hoc analysis of logged conflict records: gradient-norm spread,
//! pairwise angle histograms and per-pair weight trajectories.
//!
//! Everything here is a pure function of the parsed records.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientVector, GroupId};
use crate::cases::ModalityCase;
use crate::error::{Error, Result};
use crate::gmd::cosine_similarity;
use crate::trainer::ConflictLine;

pub const ANGLE_BINS: usize = 18;
pub const BIN_WIDTH_DEG: f64 = 180.0 / ANGLE_BINS as f64;
/// Angles this close to a whole degree are snapped to it before binning, so
/// that e.g. `acos(-0.5)` lands in the 120 degree bin.
const SNAP_DEG: f64 = 1e-9;
pub const DEFAULT_WINDOW: usize = 100;

/// Reads JSON-lines records; blank lines are skipped.
pub fn parse_conflicts<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<ConflictLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConflictLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let n = rec.report.cases.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&rec.report.cos_matrix) || !square(&rec.report.post_cos_matrix) || rec.report.norms.len() != n {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: format!("record matrices do not match its {n} cases"),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseNormStats {
    pub case: ModalityCase,
    /// Number of records the case appears in.
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation over those records.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Sorted by case.
    pub per_case: Vec<CaseNormStats>,
    /// Population std of the norms within a step, averaged over steps.
    pub cross_case_std: f64,
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn norm_stats(records: &[ConflictLine]) -> Result<NormStats> {
    if records.is_empty() {
        return Err(Error::invalid("norm statistics need at least one record"));
    }
    let mut by_case: BTreeMap<ModalityCase, Vec<f64>> = BTreeMap::new();
    let mut spread = 0.0;
    for r in records {
        for (c, &n) in r.report.cases.iter().zip(&r.report.norms) {
            by_case.entry(*c).or_default().push(n);
        }
        spread += population_std(&r.report.norms);
    }
    let per_case = by_case
        .into_iter()
        .map(|(case, v)| CaseNormStats {
            case,
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            std: population_std(&v),
        })
        .collect();
    Ok(NormStats {
        per_case,
        cross_case_std: spread / records.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

/// Angle in degrees for a cosine, snapped to whole degrees within tolerance.
pub fn angle_deg(cosine: f64) -> f64 {
    let a = cosine.clamp(-1.0, 1.0).acos().to_degrees();
    let r = a.round();
    if (a - r).abs() <= SNAP_DEG {
        r
    } else {
        a
    }
}

/// Bin index: `[10 b, 10 (b + 1))` degrees, with 180 in the last bin.
pub fn angle_bin(cosine: f64) -> usize {
    ((angle_deg(cosine) / BIN_WIDTH_DEG) as usize).min(ANGLE_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub counts: [u64; ANGLE_BINS],
}

impl AngleHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn add_matrix(&mut self, m: &[Vec<f64>]) {
        for (j, row) in m.iter().enumerate() {
            for &c in &row[j + 1..] {
                self.counts[angle_bin(c)] += 1;
            }
        }
    }
}

fn matrix(report: &crate::gmd::ConflictReport, phase: Phase) -> &[Vec<f64>] {
    match phase {
        Phase::Pre => &report.cos_matrix,
        Phase::Post => &report.post_cos_matrix,
    }
}

/// Histogram of every recorded pair's angle.
pub fn angle_histogram(records: &[ConflictLine], phase: Phase) -> AngleHistogram {
    let mut h = AngleHistogram {
        counts: [0; ANGLE_BINS],
    };
    for r in records {
        h.add_matrix(matrix(&r.report, phase));
    }
    h
}

/// Cosine matrix recomputed from gradients stored in a record, or `None` if
/// the record carries no gradients.
pub fn recompute_cosines(record: &ConflictLine, phase: Phase) -> Option<Result<Vec<Vec<f64>>>> {
    let grads = match phase {
        Phase::Pre => record.shared_grads.as_ref()?,
        Phase::Post => record.calibrated_grads.as_ref()?,
    };
    let id = GroupId::new("shared");
    Some((|| {
        let gs = grads
            .iter()
            .map(|g| GradientVector::new(id.clone(), g.clone()))
            .collect::<Result<Vec<_>>>()?;
        (0..gs.len())
            .map(|a| {
                (0..gs.len())
                    .map(|b| {
                        if a != b {
                            cosine_similarity(&gs[a], &gs[b])
                        } else if gs[a].norm() < crate::gmd::ZERO_NORM_EPS {
                            Ok(0.0)
                        } else {
                            Ok(1.0)
                        }
                    })
                    .collect()
            })
            .collect()
    })())
}

/// [`angle_histogram`] computed from stored gradients instead of the logged
/// cosines. Fails if any record lacks gradients.
pub fn angle_histogram_from_gradients(records: &[ConflictLine], phase: Phase) -> Result<AngleHistogram> {
    let mut h = AngleHistogram {
        counts: [0; ANGLE_BINS],
    };
    for r in records {
        let m = recompute_cosines(r, phase)
            .ok_or_else(|| Error::invalid(format!("record for step {} has no stored gradients", r.step)))??;
        h.add_matrix(&m);
    }
    Ok(h)
}

/// Share of originally conflicting pairs whose post-calibration cosine is at
/// least `-tol`, i.e. whose angle is at most 90 degrees. `None` if no pair
/// conflicted.
pub fn resolved_fraction(records: &[ConflictLine], tol: f64) -> Option<f64> {
    let mut total = 0usize;
    let mut ok = 0usize;
    for r in records {
        for (j, k) in r.report.conflicting_pairs() {
            total += 1;
            if r.report.post_cos_matrix[j][k] >= -tol {
                ok += 1;
            }
        }
    }
    (total > 0).then(|| ok as f64 / total as f64)
}

/// Centered moving average; positions past either end replicate the edge value.
///
/// For an even window the extra sample is taken on the right.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    if window > series.len() {
        return Err(Error::invalid(format!(
            "smoothing window {window} exceeds series length {}",
            series.len()
        )));
    }
    let n = series.len() as isize;
    let left = ((window - 1) / 2) as isize;
    let right = window as isize - 1 - left;
    let at = |i: isize| series[i.clamp(0, n - 1) as usize];
    Ok((0..n)
        .map(|t| (t - left..=t + right).map(at).sum::<f64>() / window as f64)
        .collect())
}

/// Decoupling weights of one case pair over the steps where both were sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    pub seed: u64,
    pub case_j: ModalityCase,
    pub case_k: ModalityCase,
    pub steps: Vec<u64>,
    /// Raw weight of `case_j`; 1 on steps without a conflict.
    pub w_j: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_j_smooth: Vec<f64>,
    pub w_k_smooth: Vec<f64>,
    /// Window actually used: the requested one, clamped to the trace length.
    pub window: usize,
}

/// One trace per (seed, case pair), ordered by seed and then pair.
pub fn weight_traces(records: &[ConflictLine], window: usize) -> Result<Vec<WeightTrace>> {
    if window == 0 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    type Raw = (Vec<u64>, Vec<f64>, Vec<f64>);
    let mut raw: BTreeMap<(u64, ModalityCase, ModalityCase), Raw> = BTreeMap::new();
    for r in records {
        let rep = &r.report;
        let weights: BTreeMap<(usize, usize), (f64, f64)> =
            rep.weights.iter().map(|w| ((w.j, w.k), (w.w_j, w.w_k))).collect();
        for (j, k) in rep.pairs() {
            let (wj, wk) = weights.get(&(j, k)).copied().unwrap_or((1.0, 1.0));
            let e = raw.entry((r.seed, rep.cases[j], rep.cases[k])).or_default();
            e.0.push(r.step);
            e.1.push(wj);
            e.2.push(wk);
        }
    }
    raw.into_iter()
        .map(|((seed, case_j, case_k), (steps, w_j, w_k))| {
            let w = window.min(steps.len());
            Ok(WeightTrace {
                seed,
                case_j,
                case_k,
                w_j_smooth: smooth(&w_j, w)?,
                w_k_smooth: smooth(&w_k, w)?,
                steps,
                w_j,
                w_k,
                window: w,
            })
        })
        .collect()
}

pub fn write_norm_stats_csv<W: Write>(stats: &NormStats, mut out: W) -> Result<()> {
    writeln!(out, "case_mask,count,mean,std")?;
    for s in &stats.per_case {
        writeln!(out, "{},{},{},{}", s.case, s.count, s.mean, s.std)?;
    }
    writeln!(out, "cross_case,,{},", stats.cross_case_std)?;
    Ok(())
}

pub fn write_angle_csv<W: Write>(pre: &AngleHistogram, post: &AngleHistogram, mut out: W) -> Result<()> {
    writeln!(out, "bin_lo_deg,bin_hi_deg,pre_count,post_count")?;
    for b in 0..ANGLE_BINS {
        let lo = b as f64 * BIN_WIDTH_DEG;
        writeln!(
            out,
            "{},{},{},{}",
            lo,
            lo + BIN_WIDTH_DEG,
            pre.counts[b],
            post.counts[b]
        )?;
    }
    Ok(())
}

pub fn write_weight_csv<W: Write>(traces: &[WeightTrace], mut out: W) -> Result<()> {
    writeln!(out, "seed,case_j,case_k,step,w_j,w_k,w_j_smooth,w_k_smooth")?;
    for t in traces {
        for i in 0..t.steps.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.seed, t.case_j, t.case_k, t.steps[i], t.w_j[i], t.w_k[i], t.w_j_smooth[i], t.w_k_smooth[i]
            )?;
        }
    }
    Ok(())
}
