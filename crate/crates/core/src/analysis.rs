//! Device signatures: per-pattern ΔI/I across cycles, their statistics, a
//! pooled z-score distance, nearest-centroid classification and population
//! uniqueness.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{delta_i_over_i, SequenceTrace};

/// Smallest pooled standard deviation used by [`signature_distance`], so that
/// noiseless signatures compare finitely.
pub const STD_FLOOR: f64 = 1e-6;

/// ΔI/I per pattern (columns) and cycle (rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub patterns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SignatureVector {
    pub fn new(patterns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (c, row) in rows.iter().enumerate() {
            if row.len() != patterns.len() {
                return Err(Error::domain(format!(
                    "signature row {c} has {} entries for {} patterns",
                    row.len(),
                    patterns.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("signature row {c} has a non-finite entry")));
            }
        }
        Ok(SignatureVector { patterns, rows })
    }

    pub fn cycles(&self) -> usize {
        self.rows.len()
    }

    /// Signature with one cycle removed.
    pub fn without_cycle(&self, cycle: usize) -> Self {
        let rows = self.rows.iter().enumerate().filter(|&(c, _)| c != cycle).map(|(_, r)| r.clone()).collect();
        SignatureVector { patterns: self.patterns.clone(), rows }
    }

    pub fn cycle(&self, cycle: usize) -> Self {
        SignatureVector { patterns: self.patterns.clone(), rows: alloc::vec![self.rows[cycle].clone()] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureStats {
    pub patterns: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation across cycles.
    pub std: Vec<f64>,
    pub cycles: usize,
}

impl SignatureStats {
    /// Columns rearranged to follow `order` (pattern labels).
    pub fn reordered(&self, order: &[String]) -> Result<Self> {
        let mut mean = Vec::with_capacity(order.len());
        let mut std = Vec::with_capacity(order.len());
        for label in order {
            let j = self
                .patterns
                .iter()
                .position(|p| p == label)
                .ok_or_else(|| Error::domain(format!("pattern `{label}` missing from signature")))?;
            mean.push(self.mean[j]);
            std.push(self.std[j]);
        }
        Ok(SignatureStats { patterns: order.to_vec(), mean, std, cycles: self.cycles })
    }

    pub fn argmax(&self) -> usize {
        arg_by(&self.mean, |a, b| a > b)
    }

    pub fn argmin(&self) -> usize {
        arg_by(&self.mean, |a, b| a < b)
    }
}

fn arg_by(xs: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if better(x, xs[best]) {
            best = i;
        }
    }
    best
}

/// ΔI/I for every (READ, preceding REST) pair of a sequence run.
pub fn extract_signature(trace: &SequenceTrace) -> Result<SignatureVector> {
    let n = trace.patterns.len();
    let mut rows = Vec::with_capacity(trace.cycles);
    for c in 0..trace.cycles {
        let mut row = Vec::with_capacity(n);
        for (j, label) in trace.patterns.iter().enumerate() {
            let step = trace
                .steps
                .iter()
                .find(|s| s.cycle == c && s.pattern == j)
                .ok_or_else(|| Error::IncompleteTrace(format!("cycle {c}, pattern {label}: step missing")))?;
            let read = step
                .i_read
                .ok_or_else(|| Error::IncompleteTrace(format!("cycle {c}, pattern {label}: READ missing")))?;
            let rest = step
                .i_rest_before
                .ok_or_else(|| Error::IncompleteTrace(format!("cycle {c}, pattern {label}: preceding REST missing")))?;
            row.push(delta_i_over_i(read, rest)?);
        }
        rows.push(row);
    }
    SignatureVector::new(trace.patterns.clone(), rows)
}

/// Column-wise mean and population standard deviation.
pub fn signature_stats(sig: &SignatureVector) -> Result<SignatureStats> {
    let n = sig.rows.len();
    if n == 0 {
        return Err(Error::domain("signature has no cycles"));
    }
    let m = sig.patterns.len();
    let mut mean = alloc::vec![0.0; m];
    for row in &sig.rows {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    for x in &mut mean {
        *x /= n as f64;
    }
    let mut var = alloc::vec![0.0; m];
    for row in &sig.rows {
        for j in 0..m {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    let std = var.iter().map(|v| libm::sqrt(v / n as f64)).collect();
    Ok(SignatureStats { patterns: sig.patterns.clone(), mean, std, cycles: n })
}

/// Root-mean-square pooled z-score between two signatures.
///
/// Each pattern contributes `z = Δmean / sqrt((σa² + σb²)/2)` with the
/// pooled deviation floored at [`STD_FLOOR`]. Averaging `z²` over patterns
/// keeps the scale independent of the pattern count, so a threshold of 3
/// means "three pooled deviations per pattern".
pub fn signature_distance(a: &SignatureStats, b: &SignatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() || a.std.len() != b.std.len() || a.mean.len() != a.std.len() {
        return Err(Error::domain(format!("signature lengths differ ({} vs {})", a.mean.len(), b.mean.len())));
    }
    if a.mean.is_empty() {
        return Err(Error::domain("empty signatures"));
    }
    let mut sum = 0.0;
    for j in 0..a.mean.len() {
        let pooled = libm::sqrt(0.5 * (a.std[j] * a.std[j] + b.std[j] * b.std[j])).max(STD_FLOOR);
        let z = (a.mean[j] - b.mean[j]) / pooled;
        sum += z * z;
    }
    Ok(libm::sqrt(sum / a.mean.len() as f64))
}

/// Per-pattern deviation pooled over a whole population of signatures.
///
/// Distances measured against one fixed scale form a true metric, which the
/// pairwise pooling of [`signature_distance`] does not guarantee.
pub fn pooled_scale(population: &[SignatureStats]) -> Result<Vec<f64>> {
    let first = population.first().ok_or_else(|| Error::domain("empty population"))?;
    let n = first.std.len();
    let mut acc = alloc::vec![0.0; n];
    for s in population {
        if s.std.len() != n {
            return Err(Error::domain("signature lengths differ within the population"));
        }
        for (a, sd) in acc.iter_mut().zip(&s.std) {
            *a += sd * sd;
        }
    }
    Ok(acc.iter().map(|v| libm::sqrt(v / population.len() as f64).max(STD_FLOOR)).collect())
}

/// Root-mean-square z-score of the mean difference against a fixed scale.
pub fn scaled_distance(a: &SignatureStats, b: &SignatureStats, scale: &[f64]) -> Result<f64> {
    if a.mean.len() != b.mean.len() || a.mean.len() != scale.len() || scale.is_empty() {
        return Err(Error::domain("signature and scale lengths differ"));
    }
    let sum: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .zip(scale)
        .map(|((x, y), s)| {
            let z = (x - y) / s;
            z * z
        })
        .sum();
    Ok(libm::sqrt(sum / scale.len() as f64))
}

/// All pairwise distances of a population under its own pooled scale.
pub fn distance_matrix(population: &[SignatureStats]) -> Result<Vec<Vec<f64>>> {
    let scale = pooled_scale(population)?;
    population.iter().map(|a| population.iter().map(|b| scaled_distance(a, b, &scale)).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub index: usize,
    pub distance: f64,
    /// Runner-up distance minus best distance; `None` for a library of one.
    pub margin: Option<f64>,
}

/// Nearest library signature to the observation's statistics. Ties go to the
/// earliest library entry.
pub fn classify_source(observed: &SignatureVector, library: &[(String, SignatureStats)]) -> Result<Classification> {
    if library.is_empty() {
        return Err(Error::domain("classification library is empty"));
    }
    let obs = signature_stats(observed)?;
    let mut distances = Vec::with_capacity(library.len());
    for (_, stats) in library {
        distances.push(signature_distance(&obs, stats)?);
    }
    let best = arg_by(&distances, |a, b| a < b);
    let margin = distances
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &d)| d)
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
        .map(|runner_up| runner_up - distances[best]);
    Ok(Classification { label: library[best].0.clone(), index: best, distance: distances[best], margin })
}

/// Leave-one-cycle-out self-classification of labelled signatures.
///
/// Each cycle of each signature is classified against a library built from
/// every signature, with that cycle held out of its own entry. Returns the
/// number of correct calls and the number of calls.
pub fn leave_one_cycle_out(signatures: &[(String, SignatureVector)]) -> Result<(usize, usize)> {
    let mut correct = 0;
    let mut total = 0;
    for (k, (_, sig)) in signatures.iter().enumerate() {
        if sig.cycles() < 2 {
            return Err(Error::domain("leave-one-out needs at least two cycles per signature"));
        }
        for c in 0..sig.cycles() {
            let library = signatures
                .iter()
                .enumerate()
                .map(|(i, (label, s))| {
                    let s = if i == k { s.without_cycle(c) } else { s.clone() };
                    signature_stats(&s).map(|st| (label.clone(), st))
                })
                .collect::<Result<Vec<_>>>()?;
            if classify_source(&sig.cycle(c), &library)?.index == k {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok((correct, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub devices: usize,
    pub inter_distance: f64,
    pub intra_distance: f64,
    /// `inter / intra`; infinite when replicates are indistinguishable.
    pub score: f64,
}

/// Inter-device versus intra-device signature distances.
///
/// `population[i]` is the reference signature of device `i`; `replicates[i]`
/// are repeated measurements of the same device.
pub fn uniqueness_report(
    population: &[SignatureStats],
    replicates: &[Vec<SignatureStats>],
) -> Result<UniquenessReport> {
    if population.len() < 2 {
        return Err(Error::domain("uniqueness needs at least two devices"));
    }
    if replicates.len() != population.len() {
        return Err(Error::domain("one replicate set per device is required"));
    }
    if replicates.iter().any(|r| r.len() < 2) {
        return Err(Error::domain("uniqueness needs at least two replicates per device"));
    }
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for i in 0..population.len() {
        for j in i + 1..population.len() {
            inter += signature_distance(&population[i], &population[j])?;
            pairs += 1;
        }
    }
    let mut intra = 0.0;
    let mut intra_pairs = 0usize;
    for reps in replicates {
        for i in 0..reps.len() {
            for j in i + 1..reps.len() {
                intra += signature_distance(&reps[i], &reps[j])?;
                intra_pairs += 1;
            }
        }
    }
    let inter = inter / pairs as f64;
    let intra = intra / intra_pairs as f64;
    let score = if intra > 0.0 {
        inter / intra
    } else if inter > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(UniquenessReport { devices: population.len(), inter_distance: inter, intra_distance: intra, score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn stats(mean: Vec<f64>, std: Vec<f64>) -> SignatureStats {
        SignatureStats { patterns: labels(mean.len()), mean, std, cycles: 5 }
    }

    #[test]
    fn stats_arithmetic() {
        let one = SignatureVector::new(labels(3), vec![vec![0.1, -0.2, 0.3]]).unwrap();
        let s = signature_stats(&one).unwrap();
        assert_eq!(s.std, vec![0.0; 3]);
        let two = SignatureVector::new(labels(2), vec![vec![0.1, 0.1], vec![0.3, 0.3]]).unwrap();
        let s = signature_stats(&two).unwrap();
        for j in 0..2 {
            assert!((s.mean[j] - 0.2).abs() < 1e-15);
            assert!((s.std[j] - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_identity_and_length_check() {
        let a = stats(vec![0.1, 0.2], vec![0.01, 0.02]);
        assert_eq!(signature_distance(&a, &a).unwrap(), 0.0);
        let b = stats(vec![0.1], vec![0.01]);
        assert!(signature_distance(&a, &b).is_err());
    }

    #[test]
    fn distance_is_rms_of_pooled_z() {
        let a = stats(vec![0.0, 0.0], vec![0.1, 0.1]);
        let b = stats(vec![0.3, 0.0], vec![0.1, 0.1]);
        // z = (3, 0), rms = 3/sqrt(2)
        assert!((signature_distance(&a, &b).unwrap() - 3.0 / libm::sqrt(2.0)).abs() < 1e-12);
    }

    #[test]
    fn classification_tie_breaks_to_first() {
        let obs = SignatureVector::new(labels(2), vec![vec![0.1, 0.2]]).unwrap();
        let s = stats(vec![0.1, 0.25], vec![0.01, 0.01]);
        let lib = vec![("a".to_string(), s.clone()), ("b".to_string(), s)];
        let c = classify_source(&obs, &lib).unwrap();
        assert_eq!(c.label, "a");
        assert_eq!(c.margin, Some(0.0));
        let single = classify_source(&obs, &lib[..1]).unwrap();
        assert_eq!(single.margin, None);
        assert!(classify_source(&obs, &[]).is_err());
    }

    #[test]
    fn identical_population_scores_zero() {
        let s = stats(vec![0.1, 0.2], vec![0.01, 0.01]);
        let pop = vec![s.clone(), s.clone(), s.clone()];
        let reps = vec![vec![s.clone(), s.clone()]; 3];
        let r = uniqueness_report(&pop, &reps).unwrap();
        assert_eq!(r.inter_distance, 0.0);
        assert_eq!(r.score, 0.0);
        assert!(uniqueness_report(&pop[..1], &reps[..1]).is_err());
    }

    #[test]
    fn non_finite_rows_are_rejected() {
        assert!(SignatureVector::new(labels(2), vec![vec![0.0, f64::NAN]]).is_err());
        assert!(SignatureVector::new(labels(2), vec![vec![0.0]]).is_err());
    }
}
