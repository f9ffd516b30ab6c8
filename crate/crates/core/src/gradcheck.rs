//! Finite-difference verification of every graph primitive and loss term
//! over randomized toy shapes, in 64-bit arithmetic.

use adgan_tensor::{grad_check, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::objectives::{dis_loss, fm_loss, gan_loss_d, gan_loss_g, recon_loss, GanLoss};

pub const EPS_FD: f64 = 1e-6;

/// Worst relative error of one check over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
}

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Op = fn(&mut Graph<f64>, &[Var]) -> adgan_tensor::Result<Var>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, so kinks stay outside the stencil.
fn rand_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    rand_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn d(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn shape3(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [d(rng, 1, 3), d(rng, 1, 4), d(rng, 1, 4)]
}

fn single(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = shape3(rng);
    vec![rand_nonzero(rng, &s)]
}

fn pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = shape3(rng);
    vec![rand_tensor(rng, &s), rand_tensor(rng, &s)]
}

/// Two tensors whose elementwise difference avoids zero.
fn offset_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let s = shape3(rng);
    let a = rand_tensor(rng, &s);
    let delta = rand_nonzero(rng, &s);
    let b = Tensor::new(
        s.to_vec(),
        a.data().iter().zip(delta.data()).map(|(x, y)| x + y).collect(),
    )
    .unwrap();
    vec![a, b]
}

fn logits(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let n = d(rng, 1, 6);
    let mut t = |_| rand_tensor(rng, &[n]).map(|v| 4.0 * v);
    vec![t(0), t(1)]
}

fn suite() -> Vec<(&'static str, Inputs, Op)> {
    vec![
        (
            "conv2d",
            |rng| {
                let (n, ci, co, k) = (d(rng, 1, 2), d(rng, 1, 3), d(rng, 1, 4), d(rng, 1, 4));
                let h = d(rng, k.max(3), 8);
                vec![rand_tensor(rng, &[n, ci, h, h]), rand_tensor(rng, &[co, ci, k, k])]
            },
            |g, v| {
                let k = g.shape(v[1])[2];
                let stride = 1 + (g.shape(v[0])[2] + k) % 2;
                g.conv2d(v[0], v[1], stride, k / 2)
            },
        ),
        (
            "bias_add",
            |rng| {
                let (n, c, h) = (d(rng, 1, 3), d(rng, 1, 4), d(rng, 1, 4));
                vec![rand_tensor(rng, &[n, c, h, h]), rand_tensor(rng, &[c])]
            },
            |g, v| g.bias_add(v[0], v[1]),
        ),
        (
            "upsample2",
            |rng| {
                let s = [d(rng, 1, 2), d(rng, 1, 3), d(rng, 1, 4), d(rng, 1, 4)];
                vec![rand_tensor(rng, &s)]
            },
            |g, v| g.upsample2(v[0]),
        ),
        (
            "avg_pool2",
            |rng| {
                let s = [d(rng, 1, 2), d(rng, 1, 3), 2 * d(rng, 1, 3), 2 * d(rng, 1, 3)];
                vec![rand_tensor(rng, &s)]
            },
            |g, v| g.avg_pool2(v[0]),
        ),
        (
            "global_avg_pool",
            |rng| {
                let s = [d(rng, 1, 3), d(rng, 1, 4), d(rng, 1, 4), d(rng, 1, 4)];
                vec![rand_tensor(rng, &s)]
            },
            |g, v| g.global_avg_pool(v[0]),
        ),
        (
            "linear",
            |rng| {
                let (n, i, o) = (d(rng, 1, 4), d(rng, 1, 6), d(rng, 1, 5));
                vec![rand_tensor(rng, &[n, i]), rand_tensor(rng, &[o, i]), rand_tensor(rng, &[o])]
            },
            |g, v| g.linear(v[0], v[1], Some(v[2])),
        ),
        (
            "matmul",
            |rng| {
                let (m, k, n) = (d(rng, 1, 5), d(rng, 1, 5), d(rng, 1, 5));
                vec![rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, n])]
            },
            |g, v| g.matmul(v[0], v[1]),
        ),
        ("add", pair, |g, v| g.add(v[0], v[1])),
        ("sub", pair, |g, v| g.sub(v[0], v[1])),
        ("mul", pair, |g, v| g.mul(v[0], v[1])),
        ("scale", pair, |g, v| Ok(g.scale(v[0], -2.5))),
        ("add_scalar", pair, |g, v| Ok(g.add_scalar(v[0], 0.75))),
        (
            "concat_channels",
            |rng| {
                let (n, h, w) = (d(rng, 1, 2), d(rng, 1, 4), d(rng, 1, 4));
                (0..3)
                    .map(|_| {
                        let c = d(rng, 1, 3);
                        rand_tensor(rng, &[n, c, h, w])
                    })
                    .collect()
            },
            |g, v| g.concat_channels(v),
        ),
        ("leaky_relu", single, |g, v| Ok(g.leaky_relu(v[0], 0.2))),
        ("relu", single, |g, v| Ok(g.relu(v[0]))),
        ("sigmoid", single, |g, v| Ok(g.sigmoid(v[0]))),
        ("tanh", single, |g, v| Ok(g.tanh(v[0]))),
        ("softplus", single, |g, v| Ok(g.softplus(v[0]))),
        (
            "log",
            |rng| {
                let s = shape3(rng);
                vec![rand_tensor(rng, &s).map(|v| v.abs() + 0.5)]
            },
            |g, v| Ok(g.log(v[0])),
        ),
        ("mean", single, |g, v| Ok(g.mean(v[0]))),
        ("sum", single, |g, v| Ok(g.sum(v[0]))),
        ("l1_mean", offset_pair, |g, v| g.l1_mean(v[0], v[1])),
        (
            "gather",
            |rng| {
                let s = [d(rng, 1, 5), d(rng, 1, 6)];
                vec![rand_tensor(rng, &s)]
            },
            |g, v| {
                let (n, k) = (g.shape(v[0])[0], g.shape(v[0])[1]);
                let idx: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % k).collect();
                g.gather(v[0], &idx)
            },
        ),
        (
            "reshape",
            |rng| {
                let s = [d(rng, 1, 3), d(rng, 1, 4)];
                vec![rand_tensor(rng, &s)]
            },
            |g, v| {
                let n = g.value(v[0]).numel();
                g.reshape(v[0], vec![n])
            },
        ),
        (
            "adain",
            |rng| {
                let (n, c, h, w) = (d(rng, 1, 2), d(rng, 1, 4), d(rng, 2, 5), d(rng, 2, 5));
                vec![rand_tensor(rng, &[n, c, h, w]), rand_tensor(rng, &[n, c]), rand_tensor(rng, &[n, c])]
            },
            |g, v| g.adain(v[0], v[1], v[2], 1e-5),
        ),
        ("gan_loss_d", logits, |g, v| Ok(gan_loss_d(g, v[0], v[1]).expect("same length"))),
        ("gan_loss_g saturating", logits, |g, v| Ok(gan_loss_g(g, v[0], GanLoss::Saturating))),
        ("gan_loss_g non-saturating", logits, |g, v| {
            Ok(gan_loss_g(g, v[0], GanLoss::NonSaturating))
        }),
        ("recon_loss", offset_pair, |g, v| Ok(recon_loss(g, v[0], v[1]).expect("same shape"))),
        ("fm_loss", offset_pair, |g, v| Ok(fm_loss(g, v[0], v[1]).expect("same shape"))),
        (
            "dis_loss",
            |rng| {
                let mut v = offset_pair(rng);
                let n = d(rng, 1, 8);
                let z = rand_tensor(rng, &[n]);
                let delta = rand_nonzero(rng, &[n]);
                let zf = Tensor::new(vec![n], z.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect()).unwrap();
                v.push(z);
                v.push(zf);
                v
            },
            |g, v| Ok(dis_loss(g, v[0], v[1], v[2], v[3], 0.7).expect("same shapes")),
        ),
    ]
}

/// Weights every output coordinate by a fixed random factor before
/// summing, so each one contributes a distinct sensitivity.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> adgan_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Runs every check for `seeds` seeds each.
pub fn run_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, inputs, op) in suite() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = inputs(&mut rng);
            let r = grad_check(
                |g, v| {
                    let y = op(g, v)?;
                    project(g, y, seed)
                },
                &x,
                EPS_FD,
            )?;
            worst = if r.max_rel_error.is_nan() { f64::NAN } else { worst.max(r.max_rel_error) };
            if worst.is_nan() {
                break;
            }
        }
        out.push(CheckResult {
            name,
            seeds,
            max_rel_error: worst,
        });
    }
    Ok(out)
}
