//! Gradient-guided modality decoupling.
//!
//! Per-case gradients of the shared parameters are compared pairwise by
//! cosine similarity. For every pair with a strictly negative cosine, each
//! gradient loses its projection onto the *original* other gradient. With
//! more than two cases the corrections are applied simultaneously against the
//! original gradients, so the result does not depend on input order.
//!
//! For a single conflicting pair the correction is the same as reweighting:
//! `g̃_j + g̃_k = (1 - g_j·g_k/‖g_j‖²) g_j + (1 - g_j·g_k/‖g_k‖²) g_k`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, GradientVector};
use crate::cases::ModalityCase;
use crate::error::{Error, Result};
use crate::par::Schedule;

/// Gradients with a norm below this are treated as zero: they conflict with
/// nothing and have cosine 0 against everything.
pub const ZERO_NORM_EPS: f64 = 1e-12;

fn cosine_from(d: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a < ZERO_NORM_EPS || norm_b < ZERO_NORM_EPS {
        0.0
    } else {
        (d / (norm_a * norm_b)).clamp(-1.0, 1.0)
    }
}

pub fn cosine_similarity(a: &GradientVector, b: &GradientVector) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(cosine_from(a.dot(b), a.norm(), b.norm()))
}

/// Projection of `g` onto the direction of `onto`.
pub fn project(g: &GradientVector, onto: &GradientVector) -> Result<GradientVector> {
    g.check_compatible(onto)?;
    let nsq = onto.norm_sq();
    if nsq.sqrt() < ZERO_NORM_EPS {
        return Err(Error::invalid("cannot project onto a zero-norm gradient"));
    }
    Ok(onto.scaled(g.dot(onto) / nsq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub cosine: f64,
    pub conflicting: bool,
    /// Reweighting form of the correction, present only for conflicting pairs.
    pub weights: Option<(f64, f64)>,
}

/// Decouples one pair of gradients. Non-conflicting pairs come back unchanged.
pub fn gmd_pair(gj: &GradientVector, gk: &GradientVector) -> Result<(GradientVector, GradientVector, PairOutcome)> {
    gj.check_compatible(gk)?;
    let d = gj.dot(gk);
    let (nj2, nk2) = (gj.norm_sq(), gk.norm_sq());
    let cosine = cosine_from(d, nj2.sqrt(), nk2.sqrt());
    if cosine >= 0.0 || cosine.is_nan() {
        let outcome = PairOutcome {
            cosine,
            conflicting: false,
            weights: None,
        };
        return Ok((gj.clone(), gk.clone(), outcome));
    }
    let mut tj = gj.clone();
    tj.axpy(-d / nk2, gk);
    let mut tk = gk.clone();
    tk.axpy(-d / nj2, gj);
    let outcome = PairOutcome {
        cosine,
        conflicting: true,
        weights: Some((1.0 - d / nj2, 1.0 - d / nk2)),
    };
    Ok((tj, tk, outcome))
}

/// The reweighting coefficients `(w_j, w_k)` of a conflicting pair.
pub fn gmd_weights(gj: &GradientVector, gk: &GradientVector) -> Result<(f64, f64)> {
    gj.check_compatible(gk)?;
    let d = gj.dot(gk);
    let (nj2, nk2) = (gj.norm_sq(), gk.norm_sq());
    if nj2.sqrt() < ZERO_NORM_EPS || nk2.sqrt() < ZERO_NORM_EPS {
        return Err(Error::invalid("weights are undefined for a zero-norm gradient"));
    }
    if d >= 0.0 || d.is_nan() {
        return Err(Error::invalid(format!(
            "weights apply only to conflicting pairs (cosine {:.6} is not negative)",
            cosine_from(d, nj2.sqrt(), nk2.sqrt())
        )));
    }
    Ok((1.0 - d / nj2, 1.0 - d / nk2))
}

/// Weights of one conflicting pair, indexing [`ConflictReport::cases`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub j: usize,
    pub k: usize,
    pub w_j: f64,
    pub w_k: f64,
}

/// What happened to the shared-parameter gradients in one step.
///
/// Cases are listed in canonical (sorted) order regardless of input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub cases: Vec<ModalityCase>,
    /// Pairwise cosines before calibration.
    pub cos_matrix: Vec<Vec<f64>>,
    /// Pairwise cosines between the gradients that were actually reduced.
    pub post_cos_matrix: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub weights: Vec<PairWeights>,
    pub n_conflicts: usize,
    /// Whether calibration was applied (false for the plain-sum baseline).
    pub applied: bool,
}

impl ConflictReport {
    /// Upper-triangle `(j, k)` index pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.cases.len();
        (0..n).flat_map(move |j| (j + 1..n).map(move |k| (j, k)))
    }

    /// Pairs whose original cosine was negative.
    pub fn conflicting_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs().filter(|&(j, k)| self.cos_matrix[j][k] < 0.0)
    }

    /// Records pairwise statistics without changing anything.
    pub fn observe(entries: &[(ModalityCase, GradientVector)], schedule: Schedule) -> Result<Self> {
        let prepared = Prepared::new(entries, schedule)?;
        let cos = prepared.cosines();
        let n_conflicts = prepared.conflicts().count();
        Ok(ConflictReport {
            cases: prepared.cases(),
            post_cos_matrix: cos.clone(),
            cos_matrix: cos,
            norms: prepared.norms(),
            weights: Vec::new(),
            n_conflicts,
            applied: false,
        })
    }
}

/// Inputs sorted into canonical case order, with pairwise dot products.
struct Prepared<'a> {
    /// Indices into the caller's list, sorted by case.
    order: Vec<usize>,
    entries: &'a [(ModalityCase, GradientVector)],
    /// `dots[a][b]` for canonical positions `a`, `b`.
    dots: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(entries: &'a [(ModalityCase, GradientVector)], schedule: Schedule) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("no gradients to decouple"));
        }
        for (_, g) in &entries[1..] {
            entries[0].1.check_compatible(g)?;
        }
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by_key(|&i| entries[i].0);
        if let Some(w) = order.windows(2).find(|w| entries[w[0]].0 == entries[w[1]].0) {
            return Err(Error::invalid(format!(
                "case {} appears more than once",
                entries[w[0]].0
            )));
        }
        let n = order.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
        let values = schedule.map(&pairs, |&(a, b)| {
            dot(entries[order[a]].1.values(), entries[order[b]].1.values())
        });
        let mut dots = vec![vec![0.0; n]; n];
        for (&(a, b), v) in pairs.iter().zip(values) {
            dots[a][b] = v;
            dots[b][a] = v;
        }
        Ok(Prepared { order, entries, dots })
    }

    fn grad(&self, a: usize) -> &GradientVector {
        &self.entries[self.order[a]].1
    }

    fn cases(&self) -> Vec<ModalityCase> {
        self.order.iter().map(|&i| self.entries[i].0).collect()
    }

    fn norms(&self) -> Vec<f64> {
        (0..self.order.len()).map(|a| self.dots[a][a].sqrt()).collect()
    }

    fn cosine(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return if self.dots[a][a].sqrt() < ZERO_NORM_EPS {
                0.0
            } else {
                1.0
            };
        }
        cosine_from(self.dots[a][b], self.dots[a][a].sqrt(), self.dots[b][b].sqrt())
    }

    fn cosines(&self) -> Vec<Vec<f64>> {
        let n = self.order.len();
        (0..n).map(|a| (0..n).map(|b| self.cosine(a, b)).collect()).collect()
    }

    fn conflicts(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.order.len();
        (0..n)
            .flat_map(move |a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.cosine(a, b) < 0.0)
    }
}

fn cosine_matrix(grads: &[GradientVector], schedule: Schedule) -> Vec<Vec<f64>> {
    let n = grads.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let values = schedule.map(&pairs, |&(a, b)| grads[a].dot(&grads[b]));
    let mut dots = vec![vec![0.0; n]; n];
    for (&(a, b), v) in pairs.iter().zip(values) {
        dots[a][b] = v;
        dots[b][a] = v;
    }
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let na = dots[a][a].sqrt();
                    if a == b {
                        if na < ZERO_NORM_EPS {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        cosine_from(dots[a][b], na, dots[b][b].sqrt())
                    }
                })
                .collect()
        })
        .collect()
}

/// Decouples every conflicting pair among per-case gradients.
///
/// Returns calibrated gradients in the caller's order plus a report in
/// canonical case order. Each calibrated gradient is its original minus the
/// sum of its projections onto all original conflicting counterparts, the
/// terms subtracted in ascending case order.
pub fn gmd_all(
    entries: &[(ModalityCase, GradientVector)],
    schedule: Schedule,
) -> Result<(Vec<GradientVector>, ConflictReport)> {
    let prep = Prepared::new(entries, schedule)?;
    let n = prep.order.len();
    let conflicts: Vec<(usize, usize)> = prep.conflicts().collect();

    let mut partners: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &conflicts {
        partners[a].push(b);
        partners[b].push(a);
    }
    // Partners are pushed in ascending order of the outer loop, so sort to get
    // ascending case order for both members of each pair.
    partners.iter_mut().for_each(|p| p.sort_unstable());

    let calibrated_sorted: Vec<GradientVector> = schedule.map_range(n, |a| {
        let mut g = prep.grad(a).clone();
        for &b in &partners[a] {
            g.axpy(-prep.dots[a][b] / prep.dots[b][b], prep.grad(b));
        }
        g
    });

    let weights = conflicts
        .iter()
        .map(|&(a, b)| {
            let d = prep.dots[a][b];
            PairWeights {
                j: a,
                k: b,
                w_j: 1.0 - d / prep.dots[a][a],
                w_k: 1.0 - d / prep.dots[b][b],
            }
        })
        .collect();

    let report = ConflictReport {
        cases: prep.cases(),
        cos_matrix: prep.cosines(),
        post_cos_matrix: cosine_matrix(&calibrated_sorted, schedule),
        norms: prep.norms(),
        weights,
        n_conflicts: conflicts.len(),
        applied: true,
    };

    let mut out: Vec<Option<GradientVector>> = vec![None; n];
    for (a, g) in calibrated_sorted.into_iter().enumerate() {
        out[prep.order[a]] = Some(g);
    }
    for g in out.iter().flatten() {
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient calibration".into()));
        }
    }
    Ok((out.into_iter().map(|g| g.expect("every slot filled")).collect(), report))
}

/// Element-wise sum, in list order.
pub fn reduce(grads: &[GradientVector]) -> Result<GradientVector> {
    let first = grads
        .first()
        .ok_or_else(|| Error::invalid("cannot reduce an empty gradient list"))?;
    let mut acc = first.clone();
    for g in &grads[1..] {
        acc.check_compatible(g)?;
        acc.axpy(1.0, g);
    }
    Ok(acc)
}

/// `‖(g_j + g_k) - g_j‖ / ‖g_j‖`: how far the plain sum strays from the
/// larger gradient alone.
pub fn dominance_deviation(gj: &GradientVector, gk: &GradientVector) -> Result<f64> {
    gj.check_compatible(gk)?;
    let nj = gj.norm();
    if nj < ZERO_NORM_EPS {
        return Err(Error::invalid("dominant gradient has zero norm"));
    }
    let mut sum = gj.clone();
    sum.axpy(1.0, gk);
    sum.axpy(-1.0, gj);
    Ok(sum.norm() / nj)
}

/// Builds a 2-D pair with norm ratio `ratio` at `angle_deg` (> 90°) and
/// returns its [`dominance_deviation`], which equals `1 / ratio`.
pub fn dominance_demo(ratio: f64, angle_deg: f64) -> Result<f64> {
    if ratio <= 1.0 || !ratio.is_finite() {
        return Err(Error::invalid(format!("norm ratio must exceed 1, got {ratio}")));
    }
    if !(angle_deg > 90.0 && angle_deg <= 180.0) {
        return Err(Error::invalid(format!(
            "conflict angle must be in (90, 180] degrees, got {angle_deg}"
        )));
    }
    let phi = angle_deg.to_radians();
    let id = crate::autodiff::GroupId::new("demo");
    let gj = GradientVector::new(id.clone(), vec![ratio, 0.0])?;
    let gk = GradientVector::new(id, vec![phi.cos(), phi.sin()])?;
    dominance_deviation(&gj, &gk)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::GroupId;

    fn gv(v: &[f64]) -> GradientVector {
        GradientVector::new(GroupId::new("shared"), v.to_vec()).unwrap()
    }

    fn case(bits: &str) -> ModalityCase {
        ModalityCase::parse_bits(bits).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&gv(&[1.0, 0.0]), &gv(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&gv(&[2.0, 0.0]), &gv(&[-1.0, 1.0])).unwrap();
        assert!((c + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let c = cosine_similarity(&gv(&[3.0, 4.0]), &gv(&[6.0, 8.0])).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&gv(&[0.0, 0.0]), &gv(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&gv(&[1.0]), &gv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project(&gv(&[2.0, 0.0]), &gv(&[-1.0, 1.0])).unwrap().values(),
            &[1.0, -1.0]
        );
        let v = gv(&[0.3, -1.2, 4.0]);
        let p = project(&v, &v).unwrap();
        for (a, b) in p.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            project(&gv(&[0.0, 1.0]), &gv(&[1.0, 0.0])).unwrap().values(),
            &[0.0, 0.0]
        );
        assert!(project(&gv(&[1.0, 1.0]), &gv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn pair_examples() {
        let (tj, tk, out) = gmd_pair(&gv(&[2.0, 0.0]), &gv(&[-1.0, 1.0])).unwrap();
        assert_eq!(tj.values(), &[1.0, 1.0]);
        assert_eq!(tk.values(), &[0.0, 1.0]);
        assert!(out.conflicting);
        assert_eq!(tj.dot(&gv(&[-1.0, 1.0])), 0.0);
        assert_eq!(out.weights, Some((1.5, 2.0)));

        let (tj, tk, out) = gmd_pair(&gv(&[1.0, 0.0]), &gv(&[0.0, 1.0])).unwrap();
        assert_eq!((tj.values(), tk.values()), (&[1.0, 0.0][..], &[0.0, 1.0][..]));
        assert!(!out.conflicting);

        let (tj, tk, _) = gmd_pair(&gv(&[1.0, 0.0]), &gv(&[-1.0, 0.0])).unwrap();
        assert_eq!(tj.values(), &[0.0, 0.0]);
        assert_eq!(tk.values(), &[0.0, 0.0]);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(gmd_weights(&gv(&[2.0, 0.0]), &gv(&[-1.0, 1.0])).unwrap(), (1.5, 2.0));
        let (wj, wk) = gmd_weights(&gv(&[1.0, 0.0]), &gv(&[-1.0, 0.0])).unwrap();
        assert_eq!((wj, wk), (2.0, 2.0));
        let mut s = gv(&[1.0, 0.0]).scaled(wj);
        s.axpy(wk, &gv(&[-1.0, 0.0]));
        assert_eq!(s.values(), &[0.0, 0.0]);
        assert!(gmd_weights(&gv(&[1.0, 0.0]), &gv(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn reduce_examples() {
        let g = gv(&[1.0, -2.0]);
        assert_eq!(reduce(std::slice::from_ref(&g)).unwrap(), g);
        assert_eq!(reduce(&[g.clone(), g.scaled(-1.0)]).unwrap().values(), &[0.0, 0.0]);
        let (tj, tk, _) = gmd_pair(&gv(&[2.0, 0.0]), &gv(&[-1.0, 1.0])).unwrap();
        assert_eq!(reduce(&[tj, tk]).unwrap().values(), &[1.0, 2.0]);
        assert!(reduce(&[]).is_err());
    }

    #[test]
    fn all_reduces_to_pair_for_two() {
        let (a, b) = (gv(&[2.0, 0.0, 1.0]), gv(&[-1.0, 1.0, -0.5]));
        let (tj, tk, out) = gmd_pair(&a, &b).unwrap();
        let (cal, rep) = gmd_all(&[(case("10"), a), (case("01"), b)], Schedule::Sequential).unwrap();
        assert_eq!(cal, vec![tj, tk]);
        assert_eq!(rep.n_conflicts, 1);
        // Report is in canonical order: "10" ({0}) sorts before "01" ({1}).
        assert_eq!(rep.cases, vec![case("10"), case("01")]);
        let (wj, wk) = out.weights.unwrap();
        assert_eq!((rep.weights[0].w_j, rep.weights[0].w_k), (wj, wk));
    }

    #[test]
    fn non_conflicting_triple_is_untouched() {
        let gs = [gv(&[1.0, 0.0, 0.0]), gv(&[0.5, 1.0, 0.0]), gv(&[0.1, 0.2, 3.0])];
        let entries: Vec<_> = ["100", "010", "001"].iter().map(|b| case(b)).zip(gs.clone()).collect();
        let (cal, rep) = gmd_all(&entries, Schedule::Sequential).unwrap();
        assert_eq!(cal, gs.to_vec());
        assert_eq!(rep.n_conflicts, 0);
        assert!(rep.weights.is_empty());
    }

    #[test]
    fn two_conflicts_match_brute_force_projection_sums() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut found = 0;
        for _ in 0..2000 {
            let gs: Vec<GradientVector> = (0..3)
                .map(|_| gv(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let c = |a: usize, b: usize| cosine_similarity(&gs[a], &gs[b]).unwrap();
            if !(c(0, 1) < 0.0 && c(0, 2) < 0.0 && c(1, 2) >= 0.0) {
                continue;
            }
            found += 1;
            let p = |a: usize, b: usize| project(&gs[a], &gs[b]).unwrap();
            let sub = |g: &GradientVector, ps: &[GradientVector]| {
                let mut out = g.clone();
                ps.iter().for_each(|p| out.axpy(-1.0, p));
                out
            };
            let expect = [
                sub(&gs[0], &[p(0, 1), p(0, 2)]),
                sub(&gs[1], &[p(1, 0)]),
                sub(&gs[2], &[p(2, 0)]),
            ];
            let entries: Vec<_> = ["100", "010", "001"].iter().map(|b| case(b)).zip(gs.clone()).collect();
            let (cal, rep) = gmd_all(&entries, Schedule::Sequential).unwrap();
            assert_eq!(rep.n_conflicts, 2);
            for (got, want) in cal.iter().zip(&expect) {
                for (x, y) in got.values().iter().zip(want.values()) {
                    assert!((x - y).abs() < 1e-14, "{x} vs {y}");
                }
            }
        }
        assert!(found > 20, "only {found} qualifying triples");
    }

    #[test]
    fn all_rejects_bad_input() {
        let a = (case("10"), gv(&[1.0, 0.0]));
        assert!(gmd_all(&[], Schedule::Sequential).is_err());
        let (single, rep) = gmd_all(std::slice::from_ref(&a), Schedule::Sequential).unwrap();
        assert_eq!(single, vec![a.1.clone()]);
        assert_eq!(rep.n_conflicts, 0);
        let other = (
            case("01"),
            GradientVector::new(GroupId::new("head"), vec![1.0, 0.0]).unwrap(),
        );
        assert!(gmd_all(&[a.clone(), other], Schedule::Sequential).is_err());
        assert!(gmd_all(&[a.clone(), a], Schedule::Sequential).is_err());
    }

    #[test]
    fn zero_gradient_conflicts_with_nothing() {
        let entries = [(case("10"), gv(&[0.0, 0.0])), (case("01"), gv(&[-1.0, 2.0]))];
        let (cal, rep) = gmd_all(&entries, Schedule::Sequential).unwrap();
        assert_eq!(rep.cos_matrix, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(cal[1], entries[1].1);
        assert_eq!(rep.n_conflicts, 0);
    }

    #[test]
    fn dominance_examples() {
        let d = dominance_deviation(&gv(&[100.0, 0.0]), &gv(&[-1.0, 0.1])).unwrap();
        assert!((d - 1.01f64.sqrt() / 100.0).abs() < 1e-15);
        assert!((d - 0.01005).abs() < 1e-5);
        assert!((dominance_demo(10.0, 135.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(dominance_demo(1e9, 170.0).unwrap() < 1e-8);
        assert!(dominance_demo(1.0, 120.0).is_err());
        assert!(dominance_demo(5.0, 60.0).is_err());
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, d)
    }

    proptest! {
        #[test]
        fn pair_invariants(a in vec_strategy(6), b in vec_strategy(6), c in 0.01f64..100.0) {
            let (gj, gk) = (gv(&a), gv(&b));
            let (tj, tk, out) = gmd_pair(&gj, &gk).unwrap();
            if out.conflicting {
                let tol = 1e-9;
                prop_assert!(tj.dot(&gk).abs() <= tol * tj.norm() * gk.norm() + 1e-300);
                prop_assert!(tk.dot(&gj).abs() <= tol * tk.norm() * gj.norm() + 1e-300);
                prop_assert!(tj.dot(&tk) >= -1e-9);
                let (wj, wk) = out.weights.unwrap();
                let mut lhs = tj.clone();
                lhs.axpy(1.0, &tk);
                let mut rhs = gj.scaled(wj);
                rhs.axpy(wk, &gk);
                let mut diff = lhs.clone();
                diff.axpy(-1.0, &rhs);
                prop_assert!(diff.norm() <= 1e-12 * (gj.norm() + gk.norm()));
            } else {
                // Bit-exact no-op.
                prop_assert_eq!(&tj, &gj);
                prop_assert_eq!(&tk, &gk);
            }
            // Scale covariance.
            let scaled = gk.scaled(c);
            let (_, _, out2) = gmd_pair(&gj, &scaled).unwrap();
            prop_assert_eq!(out.conflicting, out2.conflicting);
            prop_assert!((out.cosine - out2.cosine).abs() < 1e-12);
            if gk.norm() > 1e-6 {
                let p1 = project(&gj, &gk).unwrap();
                let p2 = project(&gj, &scaled).unwrap();
                for (x, y) in p1.values().iter().zip(p2.values()) {
                    prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn all_is_order_independent(
            gs in proptest::collection::vec(vec_strategy(4), 2..6),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let m = 3;
            let cases: Vec<ModalityCase> = (1u16..=7).map(|mask| ModalityCase::new(mask, m).unwrap()).collect();
            let entries: Vec<_> = cases.iter().cloned().zip(gs.iter().map(|v| gv(v))).collect();
            let (cal, rep) = gmd_all(&entries, Schedule::Sequential).unwrap();
            let mut idx: Vec<usize> = (0..entries.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let shuffled: Vec<_> = idx.iter().map(|&i| entries[i].clone()).collect();
            let (cal2, rep2) = gmd_all(&shuffled, Schedule::Parallel).unwrap();
            for (pos, &i) in idx.iter().enumerate() {
                prop_assert_eq!(&cal2[pos], &cal[i]);
            }
            prop_assert_eq!(rep, rep2);
        }

        #[test]
        fn report_invariants(gs in proptest::collection::vec(vec_strategy(5), 2..7)) {
            let cases: Vec<ModalityCase> = (1u16..=7).map(|mask| ModalityCase::new(mask, 3).unwrap()).collect();
            let entries: Vec<_> = cases.into_iter().zip(gs.iter().map(|v| gv(v))).collect();
            let (_, rep) = gmd_all(&entries, Schedule::Sequential).unwrap();
            let n = rep.cases.len();
            let mut negatives = 0;
            for j in 0..n {
                prop_assert!(rep.cos_matrix[j][j] == 1.0 || rep.cos_matrix[j][j] == 0.0);
                for k in 0..n {
                    prop_assert_eq!(rep.cos_matrix[j][k], rep.cos_matrix[k][j]);
                    prop_assert!(rep.cos_matrix[j][k].abs() <= 1.0);
                    if k > j && rep.cos_matrix[j][k] < 0.0 {
                        negatives += 1;
                    }
                }
            }
            prop_assert_eq!(rep.n_conflicts, negatives);
            prop_assert_eq!(rep.weights.len(), negatives);
            for w in &rep.weights {
                prop_assert!(w.w_j >= 1.0 && w.w_k >= 1.0);
            }
        }
    }
}
