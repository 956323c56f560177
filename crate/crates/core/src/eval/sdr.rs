use crate::error::{Error, Result};

/// Cap applied to SI-SDR values, in dB.
pub const SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR in dB, clamped to `±60`. Inputs are truncated to
/// the shorter length.
pub fn si_sdr(estimate: &[f32], reference: &[f32]) -> Result<f64> {
    let n = estimate.len().min(reference.len());
    let (est, r) = (&estimate[..n], &reference[..n]);
    let rr: f64 = r.iter().map(|&x| (x as f64).powi(2)).sum();
    if rr == 0.0 {
        return Err(Error::Domain {
            op: "si_sdr",
            detail: "reference is silent".into(),
        });
    }
    let er: f64 = est.iter().zip(r).map(|(&e, &x)| e as f64 * x as f64).sum();
    let alpha = er / rr;
    let (mut target, mut noise) = (0.0f64, 0.0f64);
    for (&e, &x) in est.iter().zip(r) {
        let t = alpha * x as f64;
        target += t * t;
        noise += (e as f64 - t).powi(2);
    }
    let db = if target == 0.0 {
        -SDR_CAP_DB
    } else if noise == 0.0 {
        SDR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// Best injective assignment of references to estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationMatch {
    /// `assignment[m]` is the estimate matched to reference `m`.
    pub assignment: Vec<usize>,
    /// SI-SDR of each reference against its matched estimate.
    pub sdr_db: Vec<f64>,
}

fn injections(k: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == m {
        out.push(prefix.clone());
        return;
    }
    for e in 0..k {
        if !prefix.contains(&e) {
            prefix.push(e);
            injections(k, m, prefix, out);
            prefix.pop();
        }
    }
}

/// Exhaustive search over all injections of `M` references into `K ≥ M`
/// estimates, maximizing mean SI-SDR. The first maximum in lexicographic
/// order wins.
pub fn best_permutation_sdr(estimates: &[&[f32]], references: &[&[f32]]) -> Result<PermutationMatch> {
    let (k, m) = (estimates.len(), references.len());
    if m == 0 || k < m {
        return Err(Error::invalid(format!(
            "need at least as many estimates as references, got {k} for {m}"
        )));
    }
    let mut table = vec![0.0f64; m * k];
    for (r, reference) in references.iter().enumerate() {
        for (e, estimate) in estimates.iter().enumerate() {
            table[r * k + e] = si_sdr(estimate, reference)?;
        }
    }
    let mut all = Vec::new();
    injections(k, m, &mut Vec::with_capacity(m), &mut all);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in all {
        let score: f64 = perm.iter().enumerate().map(|(r, &e)| table[r * k + e]).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let (_, assignment) = best.expect("at least one injection");
    let sdr_db = assignment.iter().enumerate().map(|(r, &e)| table[r * k + e]).collect();
    Ok(PermutationMatch { assignment, sdr_db })
}
