//! The full-precision model against a textbook post-norm encoder written
//! from scratch here.

use spikeshift::model::{random_float_model, random_inputs, FloatLinear, FloatModel, ModelConfig};

fn dense(l: &FloatLinear) -> (&[f64], &[f64], usize) {
    match l {
        FloatLinear::Dense(d) => (&d.weights, &d.bias, d.cols),
        FloatLinear::Binary(_) => panic!("reference expects dense weights"),
    }
}

/// `x [n x in] . W [in x out] + b`.
fn linear(x: &[Vec<f64>], l: &FloatLinear) -> Vec<Vec<f64>> {
    let (w, b, cols) = dense(l);
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|j| {
                    b[j] + row
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * w[i * cols + j])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn layer_norm(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    row.iter()
        .enumerate()
        .map(|(i, v)| gamma[i] * (v - mean) * inv + beta[i])
        .collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn reference(m: &FloatModel, ids: &[usize]) -> Vec<f64> {
    let c = &m.config;
    let (d, h) = (c.dim, c.heads);
    let dk = d / h;
    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            (0..d)
                .map(|j| m.embedding[id * d + j] + m.position[t * d + j])
                .collect()
        })
        .collect();
    for blk in &m.blocks {
        let (q, k, v) = (
            linear(&x, &blk.wq),
            linear(&x, &blk.wk),
            linear(&x, &blk.wv),
        );
        let mut ctx = vec![vec![0.0; d]; x.len()];
        for head in 0..h {
            let r = head * dk..(head + 1) * dk;
            for i in 0..x.len() {
                let scores: Vec<f64> = (0..x.len())
                    .map(|j| {
                        q[i][r.clone()]
                            .iter()
                            .zip(&k[j][r.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (dk as f64).sqrt()
                    })
                    .collect();
                let p = softmax(&scores);
                for c in r.clone() {
                    ctx[i][c] = (0..x.len()).map(|j| p[j] * v[j][c]).sum();
                }
            }
        }
        let a = linear(&ctx, &blk.wo);
        let x1: Vec<Vec<f64>> = x
            .iter()
            .zip(&a)
            .map(|(r, s)| {
                let sum: Vec<f64> = r.iter().zip(s).map(|(p, q)| p + q).collect();
                layer_norm(&sum, &blk.attn_norm.gamma, &blk.attn_norm.beta)
            })
            .collect();
        let hidden: Vec<Vec<f64>> = linear(&x1, &blk.ffn_in)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f = linear(&hidden, &blk.ffn_out);
        x = x1
            .iter()
            .zip(&f)
            .map(|(r, s)| {
                let sum: Vec<f64> = r.iter().zip(s).map(|(p, q)| p + q).collect();
                layer_norm(&sum, &blk.ffn_norm.gamma, &blk.ffn_norm.beta)
            })
            .collect();
    }
    linear(&x[..1], &m.classifier).remove(0)
}

#[test]
fn float_model_matches_textbook_encoder() {
    for (seed, cfg) in [
        (1, ModelConfig::default()),
        (
            2,
            ModelConfig {
                heads: 4,
                blocks: 1,
                classes: 3,
                ..ModelConfig::default()
            },
        ),
    ] {
        let model = random_float_model(&cfg, seed).unwrap();
        let m = model.float().unwrap();
        for ids in random_inputs(&cfg, 16, 1 + seed as usize * 5, seed) {
            let got = m.forward(&ids).unwrap();
            let want = reference(m, &ids);
            assert_eq!(got.len(), cfg.classes);
            for (g, w) in got.iter().zip(&want) {
                assert!(
                    (g - w).abs() <= 1e-9 * (1.0 + w.abs()),
                    "{got:?} vs {want:?}"
                );
            }
        }
    }
}
