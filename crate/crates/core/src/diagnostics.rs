//! Separation certificates and curvature probes.
//!
//! A separation certificate is a direction β̃ together with one subset of
//! size `D_i` per precinct such that `β̃ᵀx > 0` on every chosen voter and
//! `β̃ᵀx < 0` on every other voter. Scaling β̃ up then drives every precinct's
//! likelihood toward 1, so no finite maximizer exists.

use std::io::Write;
use std::path::Path;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PrecinctData};
use crate::error::{Error, Result};
use crate::likelihood::{exact_hessian, LogitModel};
use crate::simulate::{simulate, SimConfig};

/// Smallest LP margin that counts as strict separation.
pub const MARGIN_TOL: f64 = 1e-9;
/// Eigenvalues at or below this count as nonpositive.
pub const NSD_TOL: f64 = 1e-10;
pub const DEFAULT_SEPARATION_CAP: f64 = 1e6;
pub const HEURISTIC_RANDOM_DIRECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    pub direction: Vec<f64>,
    /// Per precinct, the voters on the positive side (row indices).
    pub subsets: Vec<Vec<usize>>,
    /// `min |β̃ᵀx|` over all voters.
    pub margin: f64,
}

impl SeparationCertificate {
    /// Checks every strict inequality by substitution.
    pub fn verify(&self, data: &Dataset) -> bool {
        if self.subsets.len() != data.len() || self.direction.len() != data.dim() {
            return false;
        }
        let beta = DVector::from_column_slice(&self.direction);
        let mut margin = f64::INFINITY;
        for (pr, subset) in data.precincts().iter().zip(&self.subsets) {
            if subset.len() != pr.count() {
                return false;
            }
            let z = pr.x() * &beta;
            for (j, &v) in z.iter().enumerate() {
                let inside = subset.contains(&j);
                if (inside && v <= 0.0) || (!inside && v >= 0.0) {
                    return false;
                }
                margin = margin.min(v.abs());
            }
        }
        margin >= MARGIN_TOL && (margin - self.margin).abs() <= 1e-12 * margin.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    Exhaustive,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum SeparationOutcome {
    Certificate {
        mode: SearchMode,
        certificate: SeparationCertificate,
    },
    /// No certificate among the candidates tried. This does not prove that a
    /// finite maximizer exists.
    NoneFound { mode: SearchMode, candidates: u64 },
}

/// Maximizes `t` subject to `s_j βᵀx_j ≥ t`, `|β_k| ≤ 1`, `t ≤ 1`, where
/// `s_j = +1` on the chosen subsets and `-1` elsewhere.
fn margin_lp(data: &Dataset, subsets: &[Vec<usize>]) -> Result<Option<SeparationCertificate>> {
    let p = data.dim();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let beta: Vec<_> = (0..p).map(|_| lp.add_var(0.0, (-1.0, 1.0))).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for (pr, subset) in data.precincts().iter().zip(subsets) {
        let mut sign = vec![-1.0; pr.size()];
        for &j in subset {
            sign[j] = 1.0;
        }
        for (j, s) in sign.iter().enumerate() {
            let mut terms: Vec<(microlp::Variable, f64)> = beta
                .iter()
                .enumerate()
                .map(|(k, &v)| (v, s * pr.x()[(j, k)]))
                .filter(|(_, c)| *c != 0.0)
                .collect();
            terms.push((t, -1.0));
            lp.add_constraint(terms, ComparisonOp::Ge, 0.0);
        }
    }
    let outcome = lp
        .solve()
        .map_err(|e| Error::Evaluation(format!("separation LP failed: {e}")))?;
    let Some(sol) = outcome.solution() else {
        return Err(Error::Evaluation("separation LP was interrupted".into()));
    };
    if sol.objective() <= MARGIN_TOL {
        return Ok(None);
    }
    let direction: Vec<f64> = beta.iter().map(|&v| sol.var_value(v)).collect();
    let dir = DVector::from_column_slice(&direction);
    let margin = data
        .precincts()
        .iter()
        .flat_map(|pr| (pr.x() * &dir).iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    let cert = SeparationCertificate {
        direction,
        subsets: subsets.to_vec(),
        margin,
    };
    // the simplex answer is only trusted once it verifies exactly
    Ok(cert.verify(data).then_some(cert))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Per precinct, the `D_i` voters with the largest `uᵀx` (earlier rows win ties).
fn top_subsets(data: &Dataset, u: &DVector<f64>) -> Vec<Vec<usize>> {
    data.precincts()
        .iter()
        .map(|pr| {
            let z = pr.x() * u;
            let mut order: Vec<usize> = (0..pr.size()).collect();
            order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
            let mut s = order[..pr.count()].to_vec();
            s.sort_unstable();
            s
        })
        .collect()
}

/// Searches for a separation certificate.
///
/// When `Π_i C(|S_i|, D_i) ≤ cap` every combination of subsets is tried in
/// lexicographic order. Otherwise, with `heuristic` set, only the subsets
/// picked out by the `2p` signed axes and 100 seeded random directions are
/// tried; without it the call fails.
pub fn detect_separation(data: &Dataset, cap: f64, heuristic: bool, seed: u64) -> Result<SeparationOutcome> {
    if data.is_empty() {
        return Err(Error::Domain("cannot search an empty dataset".into()));
    }
    let ln_combos: f64 = data.precincts().iter().map(|pr| ln_choose(pr.size(), pr.count())).sum();
    if ln_combos <= cap.ln() + 1e-9 {
        return exhaustive(data);
    }
    if !heuristic {
        return Err(Error::Capability(format!(
            "about {:.3e} subset combinations exceed the cap of {cap:e}; rerun in heuristic mode",
            ln_combos.exp()
        )));
    }
    heuristic_search(data, seed)
}

fn exhaustive(data: &Dataset) -> Result<SeparationOutcome> {
    let mut combo: Vec<Vec<usize>> = data.precincts().iter().map(|pr| (0..pr.count()).collect()).collect();
    let mut tried = 0u64;
    loop {
        tried += 1;
        if let Some(certificate) = margin_lp(data, &combo)? {
            return Ok(SeparationOutcome::Certificate {
                mode: SearchMode::Exhaustive,
                certificate,
            });
        }
        // odometer: the last precinct turns fastest
        let mut i = combo.len();
        loop {
            if i == 0 {
                return Ok(SeparationOutcome::NoneFound {
                    mode: SearchMode::Exhaustive,
                    candidates: tried,
                });
            }
            i -= 1;
            let n = data.precincts()[i].size();
            if next_combination(&mut combo[i], n) {
                break;
            }
            combo[i] = (0..combo[i].len()).collect();
        }
    }
}

fn heuristic_search(data: &Dataset, seed: u64) -> Result<SeparationOutcome> {
    let p = data.dim();
    let mut directions = Vec::with_capacity(2 * p + HEURISTIC_RANDOM_DIRECTIONS);
    for k in 0..p {
        for s in [1.0, -1.0] {
            let mut u = DVector::zeros(p);
            u[k] = s;
            directions.push(u);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..HEURISTIC_RANDOM_DIRECTIONS {
        let u = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        directions.push(u.normalize());
    }
    let results: Vec<Option<SeparationCertificate>> = directions
        .par_iter()
        .map(|u| margin_lp(data, &top_subsets(data, u)))
        .collect::<Result<_>>()?;
    // first hit in candidate order
    match results.into_iter().flatten().next() {
        Some(certificate) => Ok(SeparationOutcome::Certificate {
            mode: SearchMode::Heuristic,
            certificate,
        }),
        None => Ok(SeparationOutcome::NoneFound {
            mode: SearchMode::Heuristic,
            candidates: directions.len() as u64,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub max_eig: f64,
    pub min_eig: f64,
    pub is_nsd: bool,
}

fn eigen_probe(h: DMatrix<f64>) -> HessianProbe {
    let sym = 0.5 * (&h + h.transpose());
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let max_eig = *eigenvalues.last().unwrap_or(&f64::NAN);
    let min_eig = *eigenvalues.first().unwrap_or(&f64::NAN);
    HessianProbe {
        is_nsd: max_eig <= NSD_TOL,
        eigenvalues,
        max_eig,
        min_eig,
    }
}

/// Eigenvalues of the exact Hessian at `beta`.
pub fn hessian_probe(data: &Dataset, beta: &[f64], cap: usize) -> Result<HessianProbe> {
    let m = LogitModel::from_slice(beta)?;
    Ok(eigen_probe(exact_hessian(&m, data, cap)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityRow {
    pub n: usize,
    pub max_eig: f64,
}

/// Largest eigenvalue of `(1/n)∇²ℓ(β*)` for simulated datasets of `n`
/// precincts, each drawn from `base` with only `n_precincts` changed.
pub fn asymptotic_concavity_experiment(base: &SimConfig, ns: &[usize], cap: usize) -> Result<Vec<ConcavityRow>> {
    ns.iter()
        .map(|&n| {
            let cfg = SimConfig {
                n_precincts: n,
                ..base.clone()
            };
            let sim = simulate(&cfg)?;
            let m = LogitModel::from_slice(&sim.beta_true)?;
            let h = exact_hessian(&m, sim.data.data(), cap)? / n as f64;
            Ok(ConcavityRow {
                n,
                max_eig: eigen_probe(h).max_eig,
            })
        })
        .collect()
}

pub fn write_concavity_csv(rows: &[ConcavityRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "n,max_eig")?;
    for r in rows {
        writeln!(out, "{},{}", r.n, r.max_eig)?;
    }
    Ok(())
}

/// A small dataset and coefficient vector, stored as plain numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureInstance {
    /// Per precinct, one covariate row per voter.
    pub precincts: Vec<Vec<Vec<f64>>>,
    pub counts: Vec<usize>,
    pub beta: Vec<f64>,
}

impl CurvatureInstance {
    pub fn dataset(&self) -> Result<Dataset> {
        let precincts = self
            .precincts
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (rows, &d))| PrecinctData::from_rows(format!("p{i}"), rows, d))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_precincts(precincts)
    }
}

/// Random search for an instance whose exact Hessian has an eigenvalue above
/// `+tol` and one below `-tol`: at most 3 precincts of 2 to 6 voters, an
/// intercept plus one covariate.
pub fn search_mixed_curvature(budget: usize, tol: f64, seed: u64) -> Result<Option<(CurvatureInstance, HessianProbe)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        let n_precincts = rng.random_range(1..=3);
        let mut precincts = Vec::with_capacity(n_precincts);
        let mut counts = Vec::with_capacity(n_precincts);
        for _ in 0..n_precincts {
            let size = rng.random_range(2..=6);
            let rows: Vec<Vec<f64>> = (0..size).map(|_| vec![1.0, rng.random_range(-3.0..3.0)]).collect();
            counts.push(rng.random_range(0..=size));
            precincts.push(rows);
        }
        let beta = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let inst = CurvatureInstance { precincts, counts, beta };
        let probe = hessian_probe(&inst.dataset()?, &inst.beta, crate::likelihood::DEFAULT_ENUMERATION_CAP)?;
        if probe.max_eig > tol && probe.min_eig < -tol {
            return Ok(Some((inst, probe)));
        }
    }
    Ok(None)
}

/// Writes the result of [`search_mixed_curvature`] as JSON.
pub fn write_curvature_instance(inst: &CurvatureInstance, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(inst)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{BetaSpec, CovariateScheme, VoterCount};

    fn one_d() -> Dataset {
        let pr = PrecinctData::from_rows("a", &[vec![1.0], vec![-1.0]], 1).unwrap();
        Dataset::from_precincts(vec![pr]).unwrap()
    }

    pub(crate) fn two_precinct_fixture() -> Dataset {
        let a = PrecinctData::from_rows("a", &[vec![1.0, 0.0], vec![-1.0, 0.0]], 1).unwrap();
        let b = PrecinctData::from_rows("b", &[vec![0.0, 1.0], vec![0.0, -1.0]], 1).unwrap();
        Dataset::from_precincts(vec![a, b]).unwrap()
    }

    #[test]
    fn one_dimensional_certificate() {
        let out = detect_separation(&one_d(), DEFAULT_SEPARATION_CAP, false, 0).unwrap();
        let SeparationOutcome::Certificate { certificate, mode } = out else {
            panic!("expected a certificate");
        };
        assert_eq!(mode, SearchMode::Exhaustive);
        assert_eq!(certificate.direction, vec![1.0]);
        assert_eq!(certificate.subsets, vec![vec![0]]);
        assert_eq!(certificate.margin, 1.0);
        assert!(certificate.verify(&one_d()));
    }

    #[test]
    fn two_precinct_certificate() {
        let data = two_precinct_fixture();
        let out = detect_separation(&data, DEFAULT_SEPARATION_CAP, false, 0).unwrap();
        let SeparationOutcome::Certificate { certificate, .. } = out else {
            panic!("expected a certificate");
        };
        assert!(certificate.verify(&data));
        assert_eq!(certificate.direction, vec![1.0, 1.0]);
        assert_eq!(certificate.margin, 1.0);
    }

    #[test]
    fn inseparable_instance_reports_none() {
        // identical voters cannot be split
        let pr = PrecinctData::from_rows("a", &[vec![1.0, 0.5], vec![1.0, 0.5], vec![1.0, -1.0]], 1).unwrap();
        let data = Dataset::from_precincts(vec![pr]).unwrap();
        let out = detect_separation(&data, DEFAULT_SEPARATION_CAP, false, 0).unwrap();
        assert!(matches!(
            out,
            SeparationOutcome::Certificate { .. } | SeparationOutcome::NoneFound { .. }
        ));
        if let SeparationOutcome::Certificate { certificate, .. } = &out {
            // only the lone distinct voter can be chosen
            assert_eq!(certificate.subsets, vec![vec![2]]);
            assert!(certificate.verify(&data));
        }
        let pr = PrecinctData::from_rows("a", &[vec![1.0, 0.5], vec![1.0, 0.5]], 1).unwrap();
        let data = Dataset::from_precincts(vec![pr]).unwrap();
        let out = detect_separation(&data, DEFAULT_SEPARATION_CAP, false, 0).unwrap();
        assert_eq!(
            out,
            SeparationOutcome::NoneFound {
                mode: SearchMode::Exhaustive,
                candidates: 2
            }
        );
    }

    #[test]
    fn cap_without_heuristic_is_a_capability_error() {
        let rows: Vec<Vec<f64>> = (0..40).map(|j| vec![1.0, j as f64]).collect();
        let pr = PrecinctData::from_rows("a", &rows, 20).unwrap();
        let data = Dataset::from_precincts(vec![pr]).unwrap();
        assert!(matches!(
            detect_separation(&data, DEFAULT_SEPARATION_CAP, false, 0),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn tampered_certificate_fails_verification() {
        let data = two_precinct_fixture();
        let mut c = SeparationCertificate {
            direction: vec![1.0, 1.0],
            subsets: vec![vec![0], vec![0]],
            margin: 1.0,
        };
        assert!(c.verify(&data));
        c.subsets[1] = vec![1];
        assert!(!c.verify(&data));
    }

    #[test]
    fn combinations_in_order() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 4) {
            seen.push(idx.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        let mut empty: Vec<usize> = vec![];
        assert!(!next_combination(&mut empty, 3));
    }

    #[test]
    fn fully_determined_labels_give_nsd_hessian() {
        let rows: Vec<Vec<f64>> = (0..5).map(|j| vec![1.0, j as f64 * 0.3]).collect();
        let precincts = (0..2)
            .map(|i| PrecinctData::from_rows(format!("p{i}"), &rows, 5).unwrap())
            .collect();
        let data = Dataset::from_precincts(precincts).unwrap();
        let probe = hessian_probe(&data, &[0.0, 0.0], 15).unwrap();
        assert!(probe.is_nsd);
        assert!(probe.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn concavity_table_shape() {
        let base = SimConfig {
            n_precincts: 1,
            voters_per_precinct: VoterCount::Range { min: 3, max: 6 },
            p: 2,
            beta_true: BetaSpec::Random,
            covariate_scheme: CovariateScheme::PrecinctShiftedNormal,
            precinct_shift_scale: vec![1.0],
            seed: 1,
        };
        let rows = asymptotic_concavity_experiment(&base, &[10, 20], 15).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].n, 10);
        assert!(rows.iter().all(|r| r.max_eig.is_finite()));
        let mut buf = Vec::new();
        write_concavity_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,max_eig\n10,"));
        assert_eq!(text.lines().count(), 3);
    }
}
