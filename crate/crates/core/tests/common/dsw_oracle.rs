//! Straight-line re-implementation of the extraction algorithm, written
//! against plain nested vectors and sharing no code with the library.

use std::collections::BTreeMap;

pub struct OracleDoc {
    pub id: String,
    pub is_source: bool,
    pub tokens: Vec<usize>,
    pub theta: Vec<f64>,
}

/// `beta[w][t]`; `profile_docs` are the documents whose mean distributions
/// decide the specific topics. Reserved ids (< 3) are never extracted and
/// id 2 opens every sequence.
pub fn extract(
    beta: &[Vec<f64>],
    profile_docs: &[OracleDoc],
    all_docs: &[OracleDoc],
    tol: f64,
    max_len: usize,
) -> BTreeMap<String, Vec<usize>> {
    let k = beta[0].len();
    let mut ps = vec![0.0; k];
    let mut pt = vec![0.0; k];
    let mut ns = 0.0;
    let mut nt = 0.0;
    for d in profile_docs {
        let (sum, n) = if d.is_source {
            (&mut ps, &mut ns)
        } else {
            (&mut pt, &mut nt)
        };
        *n += 1.0;
        for (acc, p) in sum.iter_mut().zip(&d.theta) {
            *acc += p;
        }
    }
    let mut source_specific = vec![false; k];
    let mut target_specific = vec![false; k];
    for t in 0..k {
        let (s, g) = (ps[t] / ns, pt[t] / nt);
        source_specific[t] = s - g > tol;
        target_specific[t] = g - s > tol;
    }

    let mut out = BTreeMap::new();
    for d in all_docs {
        let mut seq = vec![2];
        for &w in &d.tokens {
            if seq.len() == max_len {
                break;
            }
            if w < 3 {
                continue;
            }
            let row: Vec<f64> = (0..k).map(|t| beta[w][t] * d.theta[t]).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let topic = row.iter().position(|&x| x == max).unwrap();
            let specific = if d.is_source {
                source_specific[topic]
            } else {
                target_specific[topic]
            };
            if specific {
                seq.push(w);
            }
        }
        out.insert(d.id.clone(), seq);
    }
    out
}
