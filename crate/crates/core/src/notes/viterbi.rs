use crate::error::{Error, Result};

/// Most likely state path of an HMM given per-frame log emissions
/// (`frames x states`), log transitions (`from x to`) and log initial
/// probabilities. Ties resolve toward the lower state index.
pub fn viterbi(
    log_emission: &[Vec<f64>],
    log_trans: &[Vec<f64>],
    log_init: &[f64],
) -> Result<Vec<usize>> {
    let n_states = log_init.len();
    if log_emission.is_empty() {
        return Err(Error::InvalidInput(
            "viterbi needs at least one frame".into(),
        ));
    }
    if n_states == 0 || log_trans.len() != n_states || log_trans.iter().any(|r| r.len() != n_states)
    {
        return Err(Error::InvalidInput(format!(
            "transition matrix must be {n_states}x{n_states}"
        )));
    }
    for (t, row) in log_emission.iter().enumerate() {
        if row.len() != n_states {
            return Err(Error::InvalidInput(format!(
                "frame {t} has {} emissions, expected {n_states}",
                row.len()
            )));
        }
        if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidInput(format!(
                "frame {t} has a non-finite emission log-probability"
            )));
        }
    }

    let n_frames = log_emission.len();
    let mut delta: Vec<f64> = (0..n_states)
        .map(|s| log_init[s] + log_emission[0][s])
        .collect();
    check_feasible(&delta, 0)?;
    let mut back = vec![vec![0usize; n_states]; n_frames];
    let mut next = vec![0.0; n_states];
    for t in 1..n_frames {
        for (j, nj) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, di) in delta.iter().enumerate() {
                let v = di + log_trans[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            *nj = best + log_emission[t][j];
            back[t][j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
        check_feasible(&delta, t)?;
    }

    let mut state = 0;
    let mut best = f64::NEG_INFINITY;
    for (s, v) in delta.iter().enumerate() {
        if *v > best {
            best = *v;
            state = s;
        }
    }
    let mut path = vec![0; n_frames];
    path[n_frames - 1] = state;
    for t in (1..n_frames).rev() {
        state = back[t][state];
        path[t - 1] = state;
    }
    Ok(path)
}

fn check_feasible(delta: &[f64], frame: usize) -> Result<()> {
    if delta.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Infeasible { frame });
    }
    Ok(())
}
