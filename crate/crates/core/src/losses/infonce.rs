//! InfoNCE over explicit positive and negative pairs.
//!
//! ```text
//! s(a, b) = sim(a, b) / tau
//! L       = -log( sum_P e^s / (sum_P e^s + sum_N e^s) )
//!         = LSE(P u N) - LSE(P)
//! ```

use ndarray::Array1;

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.07;

/// Vectors plus index pairs into them; a vector may appear in many pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveProblem {
    pub vectors: Vec<Array1<f64>>,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Gradient of the loss with respect to each vector of the problem.
    pub grads: Vec<Array1<f64>>,
}

impl ContrastiveProblem {
    /// Each pair gets its own two vectors.
    pub fn from_pairs(positives: &[(Array1<f64>, Array1<f64>)], negatives: &[(Array1<f64>, Array1<f64>)]) -> Self {
        let mut vectors = Vec::new();
        let mut index = |pairs: &[(Array1<f64>, Array1<f64>)]| {
            pairs
                .iter()
                .map(|(a, b)| {
                    vectors.push(a.clone());
                    vectors.push(b.clone());
                    (vectors.len() - 2, vectors.len() - 1)
                })
                .collect::<Vec<_>>()
        };
        let positives = index(positives);
        let negatives = index(negatives);
        Self {
            vectors,
            positives,
            negatives,
        }
    }

    fn validate(&self, tau: f64) -> Result<usize> {
        if self.positives.is_empty() {
            return Err(Error::EmptyPositive);
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Spec(format!("tau must be positive, got {tau}")));
        }
        let d = self.vectors.first().map(|v| v.len()).unwrap_or(0);
        for v in &self.vectors {
            if v.len() != d {
                return Err(Error::Dimension { expected: d, got: v.len() });
            }
        }
        let n = self.vectors.len();
        for &(i, j) in self.positives.iter().chain(&self.negatives) {
            if i >= n || j >= n {
                return Err(Error::Index {
                    what: "contrastive vector",
                    index: i.max(j),
                    bound: n,
                });
            }
        }
        Ok(d)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Similarity and its partials with respect to both arguments.
fn similarity(a: &Array1<f64>, b: &Array1<f64>, normalize: bool) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if !normalize {
        return Ok((a.dot(b), b.clone(), a.clone()));
    }
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::NonFinite("zero-norm vector in normalized similarity".into()));
    }
    let (ua, ub) = (a / na, b / nb);
    let c = ua.dot(&ub);
    let da = (&ub - &(&ua * c)) / na;
    let db = (&ua - &(&ub * c)) / nb;
    Ok((c, da, db))
}

pub fn info_nce(
    positives: &[(Array1<f64>, Array1<f64>)],
    negatives: &[(Array1<f64>, Array1<f64>)],
    tau: f64,
    normalize: bool,
) -> Result<f64> {
    Ok(info_nce_problem(&ContrastiveProblem::from_pairs(positives, negatives), tau, normalize)?.loss)
}

pub fn info_nce_problem(problem: &ContrastiveProblem, tau: f64, normalize: bool) -> Result<ContrastiveOutput> {
    let d = problem.validate(tau)?;
    let pairs: Vec<(usize, usize)> = problem.positives.iter().chain(&problem.negatives).copied().collect();
    let n_pos = problem.positives.len();
    let mut logits = Vec::with_capacity(pairs.len());
    let mut partials = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let (s, da, db) = similarity(&problem.vectors[i], &problem.vectors[j], normalize)?;
        logits.push(s / tau);
        partials.push((da, db));
    }
    let lse_all = log_sum_exp(&logits);
    let lse_pos = log_sum_exp(&logits[..n_pos]);
    let loss = (lse_all - lse_pos).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite("l_infonce".into()));
    }
    let mut grads = vec![Array1::zeros(d); problem.vectors.len()];
    for (k, (&(i, j), (da, db))) in pairs.iter().zip(&partials).enumerate() {
        let mut w = (logits[k] - lse_all).exp();
        if k < n_pos {
            w -= (logits[k] - lse_pos).exp();
        }
        let w = w / tau;
        grads[i].scaled_add(w, da);
        grads[j].scaled_add(w, db);
    }
    Ok(ContrastiveOutput { loss, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradient_failure, DEFAULT_STEP};
    use ndarray::array;

    #[test]
    fn symmetric_case_is_log_two() {
        let a = array![1.0, 0.0];
        let l = info_nce(&[(a.clone(), a.clone())], &[(a.clone(), a.clone())], 0.07, true).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_negatives_is_zero() {
        let l = info_nce(&[(array![1.0, 2.0], array![0.5, -1.0])], &[], 0.5, true).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(info_nce(&[], &[], 0.1, true), Err(Error::EmptyPositive)));
        let e = info_nce(&[(array![1.0], array![1.0, 2.0])], &[], 0.1, true);
        assert!(matches!(e, Err(Error::Dimension { .. })));
        assert!(info_nce(&[(array![1.0], array![1.0])], &[], 0.0, true).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let a = array![1.0, 0.0];
        let b = array![-1.0, 0.0];
        let l = info_nce(&[(a.clone(), b.clone())], &[(a.clone(), a.clone())], 1e-3, true).unwrap();
        assert!((l - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let problem = ContrastiveProblem {
            vectors: vec![array![0.3, -1.2, 0.5], array![1.0, 0.2, -0.4], array![-0.7, 0.9, 0.1], array![0.2, 0.2, 1.5]],
            positives: vec![(0, 1), (0, 2)],
            negatives: vec![(0, 3), (1, 3), (2, 3)],
        };
        for normalize in [true, false] {
            let out = info_nce_problem(&problem, 0.5, normalize).unwrap();
            let flat: Vec<f64> = problem.vectors.iter().flat_map(|v| v.to_vec()).collect();
            let analytic: Vec<f64> = out.grads.iter().flat_map(|v| v.to_vec()).collect();
            let f = |x: &[f64]| {
                let mut p = problem.clone();
                p.vectors = x.chunks(3).map(|c| Array1::from(c.to_vec())).collect();
                info_nce_problem(&p, 0.5, normalize).unwrap().loss
            };
            assert!(gradient_failure(f, &flat, &analytic, DEFAULT_STEP).is_none());
        }
    }
}
