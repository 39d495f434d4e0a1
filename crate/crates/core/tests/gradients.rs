//! Finite-difference checks of every differentiable op and of the full
//! detector, over ten seeds.

use cardiospike::gradcheck::{grad_check_coords, grad_check_many};
use cardiospike::graph::{Graph, Var};
use cardiospike::model::{detector_forward, DetectorConfig, DetectorParams};
use cardiospike::ops::Padding;
use cardiospike::tensor::{Result, Tensor};
use cardiospike::training::focal_loss_masked;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: std::ops::Range<u64> = 0..10;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Contracts any output with fixed random weights so every coordinate of
/// the result carries a distinct adjoint.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = random(&mut rng, g.shape(y));
    let w = g.constant(w);
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

fn check(name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let err = grad_check_many(f, inputs, STEP).unwrap();
    assert!(err <= TOL, "{name}: relative error {err:e}");
}

#[test]
fn depthwise_conv() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (dilation, padding) in [(1, Padding::Replicate), (3, Padding::Replicate), (2, Padding::Zero)] {
            let inputs = [random(&mut rng, &[2, 9, 3]), random(&mut rng, &[3, 3]), random(&mut rng, &[3])];
            check("conv1d_depthwise", &inputs, |g, v| {
                let y = g.conv1d_depthwise_padded(v[0], v[1], v[2], dilation, padding)?;
                probe(g, y, seed)
            });
        }
    }
}

#[test]
fn channel_mix() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&mut rng, &[2, 5, 3]), random(&mut rng, &[3, 4]), random(&mut rng, &[4])];
        check("channel_mix", &inputs, |g, v| {
            let y = g.channel_mix(v[0], v[1], v[2])?;
            probe(g, y, seed)
        });
    }
}

#[test]
fn pointwise_activations() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&mut rng, &[4, 5])];
        check("gelu", &inputs, |g, v| {
            let y = g.gelu(v[0]);
            probe(g, y, seed)
        });
        check("sigmoid", &inputs, |g, v| {
            let y = g.sigmoid(v[0]);
            probe(g, y, seed)
        });
    }
}

#[test]
fn time_reductions_and_crops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&mut rng, &[2, 7, 3])];
        check("mean_over_time", &inputs, |g, v| {
            let y = g.mean_over_time(v[0])?;
            probe(g, y, seed)
        });
        check("crop_time", &inputs, |g, v| {
            let y = g.crop_time(v[0], 2, 1)?;
            probe(g, y, seed)
        });
        check("sum", &inputs, |g, v| Ok(g.sum(v[0])));
    }
}

#[test]
fn binary_ops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = [random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])];
        check("add", &pair, |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, seed)
        });
        check("mul", &pair, |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y, seed)
        });
        let gated = [random(&mut rng, &[2, 5, 3]), random(&mut rng, &[2, 3])];
        check("scale_channels", &gated, |g, v| {
            let y = g.scale_channels(v[0], v[1])?;
            probe(g, y, seed)
        });
    }
}

#[test]
fn focal_loss() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::new(vec![12, 1], (0..12).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
        let targets: Vec<u8> = (0..12).map(|_| rng.gen_range(0..=1)).collect();
        let mask: Vec<bool> = (0..12).map(|i| i % 5 != 2).collect();
        for gamma in [0.0, 1.0, 2.0, 3.5] {
            check("focal_loss", std::slice::from_ref(&logits), |g, v| {
                focal_loss_masked(g, v[0], &targets, Some(&mask), 0.25, gamma).map_err(|e| match e {
                    cardiospike::training::TrainError::Tensor(t) => t,
                    other => panic!("{other}"),
                })
            });
        }
    }
}

fn detector_check(cfg: &DetectorConfig, seed: u64, all: bool) -> f64 {
    let params = DetectorParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let leaves: Vec<Tensor> = params.leaves().into_iter().cloned().collect();
    // nonzero biases so that every parameter path is exercised
    let leaves: Vec<Tensor> = leaves
        .into_iter()
        .map(|mut t| {
            if t.rank() == 1 {
                t.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
            }
            t
        })
        .collect();
    let input = Tensor::new(
        vec![2, cfg.seg_len, 1],
        (0..2 * cfg.seg_len).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let mut inputs = leaves;
    inputs.push(input);
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if all {
                (0..t.len()).collect()
            } else {
                let mut picks: Vec<usize> = (0..4).map(|_| rng.gen_range(0..t.len())).collect();
                picks.sort_unstable();
                picks.dedup();
                picks
            }
        })
        .collect();
    let n_params = inputs.len() - 1;
    grad_check_coords(
        |g, v| {
            let mut it = v[..n_params].iter().copied();
            let vars = DetectorParams::<Var>::build(cfg, |_, _| Ok::<_, ()>(it.next().unwrap())).unwrap();
            let y = detector_forward(g, v[n_params], &vars, cfg).map_err(|e| match e {
                cardiospike::model::ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            probe(g, y, seed)
        },
        &inputs,
        &coords,
        STEP,
    )
    .unwrap()
}

#[test]
fn full_detector_small_exhaustive() {
    let cfg = DetectorConfig {
        kernel_size: 3,
        channels: 3,
        hidden: 5,
        side: 4,
        layers: 2,
        stacks: 2,
        seg_len: 12,
        pad: 2,
        classes: 1,
    };
    for seed in SEEDS {
        let err = detector_check(&cfg, seed, true);
        assert!(err <= TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn full_detector_reference_sampled() {
    let cfg = DetectorConfig::reference();
    for seed in SEEDS {
        let err = detector_check(&cfg, seed, false);
        assert!(err <= TOL, "seed {seed}: {err:e}");
    }
}
