//! Central finite differences on independent f64 reference implementations,
//! compared against the tape's reverse-mode gradients.

#![allow(dead_code)]

use l1sa::{Mode, RunningStats, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod reference {
    /// `x` NCHW, `w` OCKK, returns NOHW.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        x: &[f64],
        w: &[f64],
        b: &[f64],
        (n, c, h, wd): (usize, usize, usize, usize),
        (o, k): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> (Vec<f64>, usize, usize) {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = b[oi];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xo * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    s += xv * w[((oi * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((ni * o + oi) * oh + y) * ow + xo] = s;
                    }
                }
            }
        }
        (out, oh, ow)
    }

    pub fn linear(x: &[f64], w: &[f64], b: &[f64], n: usize, i: usize, o: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            for j in 0..o {
                out[r * o + j] = b[j] + (0..i).map(|k| x[r * i + k] * w[j * i + k]).sum::<f64>();
            }
        }
        out
    }

    pub fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v.max(0.0)).collect()
    }

    /// Batch statistics (biased variance) when `stats` is `None`.
    pub fn batchnorm(
        x: &[f64],
        g: &[f64],
        b: &[f64],
        (n, c, plane): (usize, usize, usize),
        stats: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let vals: Vec<f64> =
                (0..n).flat_map(|ni| x[(ni * c + ch) * plane..(ni * c + ch + 1) * plane].iter().copied()).collect();
            let (mean, var) = match stats {
                Some((m, v)) => (m[ch], v[ch]),
                None => {
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    (m, vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
                }
            };
            let inv = 1.0 / (var + eps).sqrt();
            for ni in 0..n {
                for p in 0..plane {
                    let idx = (ni * c + ch) * plane + p;
                    out[idx] = g[ch] * (x[idx] - mean) * inv + b[ch];
                }
            }
        }
        out
    }

    pub fn global_avg_pool(x: &[f64], plane: usize) -> Vec<f64> {
        x.chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect()
    }

    pub fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> f64 {
        let mut total = 0.0;
        for (row, &l) in logits.chunks(k).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[l];
        }
        total / labels.len() as f64
    }
}

use reference as r;

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-2;
pub const FLOOR: f64 = 1e-4;
pub const SEEDS: u64 = 20;

struct Input {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Input {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(-1.0..1.0);
            // keep away from relu kinks so the central difference is smooth
            if v.abs() < 0.05 {
                v + 0.1f32.copysign(v)
            } else {
                v
            }
        })
        .collect();
    Input { shape: shape.to_vec(), data }
}

/// Returns the largest relative error between tape gradients of
/// `sum(weights * op(inputs))` and central differences of `oracle`.
fn check(inputs: &[Input], seed: u64, op: impl Fn(&mut Tape, &[Var]) -> Var, oracle: impl Fn(&[Vec<f64>]) -> Vec<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|i| tape.param(&Tensor::new(&i.shape, i.data.clone()).unwrap())).collect();
    let out = op(&mut tape, &vars);
    let out_value: Vec<f64> = tape.value(out).data().iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let weights: Vec<f64> = (0..out_value.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seed_grad: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    tape.backward_from(out, &seed_grad).unwrap();

    let base: Vec<Vec<f64>> = inputs.iter().map(|i| i.data.iter().map(|&v| v as f64).collect()).collect();
    let reference = oracle(&base);
    assert_eq!(reference.len(), out_value.len(), "oracle output size");
    for (a, b) in reference.iter().zip(&out_value) {
        assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "forward mismatch: oracle {a} vs tape {b}");
    }
    let objective = |args: &[Vec<f64>]| oracle(args).iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>();

    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("every input receives a gradient").to_vec();
        let mut args = base.clone();
        for j in 0..args[k].len() {
            let orig = args[k][j];
            args[k][j] = orig + STEP;
            let up = objective(&args);
            args[k][j] = orig - STEP;
            let down = objective(&args);
            args[k][j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[j] as f64;
            if a.abs().max(numeric.abs()) > FLOOR {
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

/// Worst error of `case` over seeds `0..SEEDS`.
pub fn worst_over_seeds(case: impl Fn(u64) -> f64) -> f64 {
    (0..SEEDS).map(case).fold(0.0f64, f64::max)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conv2d(seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (4, 0, 4), (2, 0, 1)] {
        worst = worst.max({
            let mut g = rng(seed);
            let (n, c, h, w, o) = (2, 3, 6, 5, 4);
            let (h, w) = if k == 4 { (8, 8) } else { (h, w) };
            let ins = [input(&mut g, &[n, c, h, w]), input(&mut g, &[o, c, k, k]), input(&mut g, &[o])];
            check(
                &ins,
                seed,
                |t, v| t.conv2d(v[0], v[1], v[2], stride, pad).unwrap(),
                |a| r::conv2d(&a[0], &a[1], &a[2], (n, c, h, w), (o, k), stride, pad).0,
            )
        });
    }
    worst
}

pub fn linear(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, i, o) = (3, 7, 5);
    let ins = [input(&mut g, &[n, i]), input(&mut g, &[o, i]), input(&mut g, &[o])];
    check(&ins, seed, |t, v| t.linear(v[0], v[1], v[2]).unwrap(), |a| r::linear(&a[0], &a[1], &a[2], n, i, o))
}

pub fn relu(seed: u64) -> f64 {
    let ins = [input(&mut rng(seed), &[4, 6])];
    check(&ins, seed, |t, v| t.relu(v[0]), |a| r::relu(&a[0]))
}

pub fn add(seed: u64) -> f64 {
    let mut g = rng(seed);
    let ins = [input(&mut g, &[2, 3, 2, 2]), input(&mut g, &[2, 3, 2, 2])];
    check(&ins, seed, |t, v| t.add(v[0], v[1]).unwrap(), |a| a[0].iter().zip(&a[1]).map(|(x, y)| x + y).collect())
}

pub fn batchnorm_train(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w) = (3, 2, 2, 3);
    let ins = [input(&mut g, &[n, c, h, w]), input(&mut g, &[c]), input(&mut g, &[c])];
    check(
        &ins,
        seed,
        |t, v| t.batchnorm2d(v[0], v[1], v[2], &mut RunningStats::new(c), Mode::Train).unwrap(),
        |a| r::batchnorm(&a[0], &a[1], &a[2], (n, c, h * w), None, 1e-5),
    )
}

pub fn batchnorm_eval(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w) = (2, 3, 2, 2);
    let mean: Vec<f32> = (0..c).map(|_| g.random_range(-0.5..0.5)).collect();
    let var: Vec<f32> = (0..c).map(|_| g.random_range(0.2..2.0)).collect();
    let ins = [input(&mut g, &[n, c, h, w]), input(&mut g, &[c]), input(&mut g, &[c])];
    let stats = RunningStats { mean: mean.clone(), var: var.clone(), momentum: 0.1, eps: 1e-5 };
    let m64: Vec<f64> = mean.iter().map(|&v| v as f64).collect();
    let v64: Vec<f64> = var.iter().map(|&v| v as f64).collect();
    check(
        &ins,
        seed,
        |t, v| t.batchnorm2d(v[0], v[1], v[2], &mut stats.clone(), Mode::Eval).unwrap(),
        |a| r::batchnorm(&a[0], &a[1], &a[2], (n, c, h * w), Some((&m64, &v64)), 1e-5),
    )
}

pub fn global_avg_pool(seed: u64) -> f64 {
    let ins = [input(&mut rng(seed), &[2, 3, 4, 3])];
    check(&ins, seed, |t, v| t.global_avg_pool(v[0]).unwrap(), |a| r::global_avg_pool(&a[0], 12))
}

pub fn concat(seed: u64) -> f64 {
    let mut g = rng(seed);
    let ins = [input(&mut g, &[3, 2]), input(&mut g, &[3, 4])];
    check(
        &ins,
        seed,
        |t, v| t.concat(v[0], v[1]).unwrap(),
        |a| {
            (0..3)
                .flat_map(|i| a[0][i * 2..i * 2 + 2].iter().chain(&a[1][i * 4..i * 4 + 4]).copied().collect::<Vec<_>>())
                .collect()
        },
    )
}

pub fn reshape(seed: u64) -> f64 {
    let ins = [input(&mut rng(seed), &[2, 3, 2, 2])];
    check(&ins, seed, |t, v| t.reshape(v[0], &[2, 12]).unwrap(), |a| a[0].clone())
}

pub fn cross_entropy(seed: u64) -> f64 {
    let mut g = rng(seed);
    let labels: Vec<usize> = (0..5).map(|_| g.random_range(0..3)).collect();
    let ins = [input(&mut g, &[5, 3])];
    check(&ins, seed, |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap(), |a| vec![r::cross_entropy(&a[0], &labels, 3)])
}

/// Residual conv block into a fused classifier head, end to end.
pub fn composite_chain(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, h, w, o) = (3, 2, 4, 4, 3);
    let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 2).collect();
    let ins = [
        input(&mut g, &[n, c, h, w]),
        input(&mut g, &[o, c, 3, 3]),
        input(&mut g, &[o]),
        input(&mut g, &[o]),
        input(&mut g, &[o]),
        input(&mut g, &[o, c, 1, 1]),
        input(&mut g, &[o]),
        input(&mut g, &[n, 2]),
        input(&mut g, &[2, o + 2]),
        input(&mut g, &[2]),
    ];
    check(
        &ins,
        seed,
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
            let y = t.batchnorm2d(y, v[3], v[4], &mut RunningStats::new(o), Mode::Train).unwrap();
            let skip = t.conv2d(v[0], v[5], v[6], 2, 0).unwrap();
            let y = t.add(y, skip).unwrap();
            let y = t.relu(y);
            let y = t.global_avg_pool(y).unwrap();
            let y = t.concat(y, v[7]).unwrap();
            let y = t.linear(y, v[8], v[9]).unwrap();
            t.softmax_cross_entropy(y, &labels).unwrap()
        },
        |a| {
            let (y, oh, ow) = r::conv2d(&a[0], &a[1], &a[2], (n, c, h, w), (o, 3), 2, 1);
            let y = r::batchnorm(&y, &a[3], &a[4], (n, o, oh * ow), None, 1e-5);
            let (skip, _, _) = r::conv2d(&a[0], &a[5], &a[6], (n, c, h, w), (o, 1), 2, 0);
            let y: Vec<f64> = y.iter().zip(&skip).map(|(p, q)| p + q).collect();
            let y = r::global_avg_pool(&r::relu(&y), oh * ow);
            let fused: Vec<f64> = (0..n)
                .flat_map(|i| y[i * o..(i + 1) * o].iter().chain(&a[7][i * 2..i * 2 + 2]).copied().collect::<Vec<_>>())
                .collect();
            let logits = r::linear(&fused, &a[8], &a[9], n, o + 2, 2);
            vec![r::cross_entropy(&logits, &labels, 2)]
        },
    )
}

/// Every differentiable op with its per-seed check.
pub const OPS: &[(&str, fn(u64) -> f64)] = &[
    ("conv2d", conv2d),
    ("linear", linear),
    ("relu", relu),
    ("add", add),
    ("batchnorm2d (batch statistics)", batchnorm_train),
    ("batchnorm2d (running statistics)", batchnorm_eval),
    ("global_avg_pool", global_avg_pool),
    ("concat", concat),
    ("reshape", reshape),
    ("softmax_cross_entropy", cross_entropy),
    ("composite residual chain", composite_chain),
];
