use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive search over every state path; returns the lexicographically
/// smallest among the best-scoring ones.
pub fn brute_force(em: &[Vec<f64>], trans: &[Vec<f64>], init: &[f64]) -> (Vec<usize>, f64) {
    let n = init.len();
    let frames = em.len();
    let mut best = (vec![], f64::NEG_INFINITY);
    let total = n.pow(frames as u32);
    for code in 0..total {
        let mut path = vec![0; frames];
        let mut c = code;
        for t in (0..frames).rev() {
            path[t] = c % n;
            c /= n;
        }
        let mut score = init[path[0]] + em[0][path[0]];
        for t in 1..frames {
            score += trans[path[t - 1]][path[t]] + em[t][path[t]];
        }
        if score > best.1 {
            best = (path, score);
        }
    }
    best
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let frames = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=5);
    let em = (0..frames)
        .map(|_| (0..n).map(|_| rng.gen_range(-10.0..0.0)).collect())
        .collect();
    let trans = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-10.0..0.0)).collect())
        .collect();
    let init = (0..n).map(|_| rng.gen_range(-10.0..0.0)).collect();
    (em, trans, init)
}
