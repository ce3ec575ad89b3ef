//! Textbook tanh MLP on a flat parameter vector: weights row-major
//! `out x in` then biases, layer by layer. Loops only, no shared code with
//! the crate's batched kernels.

pub fn forward(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (i, o) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + i * o];
        let b = &params[off + i * o..off + i * o + o];
        off += i * o + o;
        let prev = acts.last().unwrap();
        let last = l == sizes.len() - 2;
        let next: Vec<f64> = (0..o)
            .map(|r| {
                let z = b[r] + (0..i).map(|c| w[r * i + c] * prev[c]).sum::<f64>();
                if last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
        acts.push(next);
    }
    acts
}

pub fn cross_entropy(sizes: &[usize], params: &[f64], x: &[f64], y: usize) -> f64 {
    let acts = forward(sizes, params, x);
    let z = acts.last().unwrap();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

/// Gradient of one sample's cross-entropy by explicit backprop.
pub fn sample_gradient(sizes: &[usize], params: &[f64], x: &[f64], y: usize) -> Vec<f64> {
    let acts = forward(sizes, params, x);
    let z = acts.last().unwrap();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let mut delta: Vec<f64> = z.iter().map(|v| (v - m).exp() / s).collect();
    delta[y] -= 1.0;

    let mut offsets = Vec::new();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        offsets.push(off);
        off += sizes[l] * sizes[l + 1] + sizes[l + 1];
    }
    let mut grad = vec![0.0; params.len()];
    for l in (0..sizes.len() - 1).rev() {
        let (i, o) = (sizes[l], sizes[l + 1]);
        let off = offsets[l];
        for r in 0..o {
            for c in 0..i {
                grad[off + r * i + c] = delta[r] * acts[l][c];
            }
            grad[off + i * o + r] = delta[r];
        }
        if l > 0 {
            delta = (0..i)
                .map(|c| {
                    let back: f64 = (0..o).map(|r| params[off + r * i + c] * delta[r]).sum();
                    back * (1.0 - acts[l][c] * acts[l][c])
                })
                .collect();
        }
    }
    grad
}

/// Plain minibatch SGD on the mean gradient over each batch.
pub fn sgd(sizes: &[usize], params: &[f64], xs: &[f64], ys: &[usize], batches: &[Vec<usize>], eta: f64) -> Vec<f64> {
    let d = sizes[0];
    let mut p = params.to_vec();
    for batch in batches {
        let mut g = vec![0.0; p.len()];
        for &k in batch {
            let gk = sample_gradient(sizes, &p, &xs[k * d..(k + 1) * d], ys[k]);
            for (a, b) in g.iter_mut().zip(gk) {
                *a += b;
            }
        }
        let scale = eta / batch.len() as f64;
        for (w, a) in p.iter_mut().zip(&g) {
            *w -= scale * a;
        }
    }
    p
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
