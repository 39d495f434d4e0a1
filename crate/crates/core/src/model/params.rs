//! Learned weights of the detector.
//!
//! [`DetectorParams`] is generic over its leaf type: `DetectorParams<Tensor>`
//! holds concrete weights, `DetectorParams<Var>` holds their handles on a
//! [`Graph`](crate::graph::Graph) during a forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DetectorConfig, ModelError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Linear<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

/// One residual base block. `depthwise.weight` is the `[k, H]` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub expand: Linear<T>,
    pub depthwise: Linear<T>,
    pub se_reduce: Linear<T>,
    pub se_expand: Linear<T>,
    pub compress: Linear<T>,
    pub skip: Linear<T>,
}

impl<T> BlockParams<T> {
    fn linears(&self) -> [(&'static str, &Linear<T>); 6] {
        [
            ("expand", &self.expand),
            ("depthwise", &self.depthwise),
            ("se_reduce", &self.se_reduce),
            ("se_expand", &self.se_expand),
            ("compress", &self.compress),
            ("skip", &self.skip),
        ]
    }

    fn linears_mut(&mut self) -> [&mut Linear<T>; 6] {
        [
            &mut self.expand,
            &mut self.depthwise,
            &mut self.se_reduce,
            &mut self.se_expand,
            &mut self.compress,
            &mut self.skip,
        ]
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            expand: self.expand.map(f),
            depthwise: self.depthwise.map(f),
            se_reduce: self.se_reduce.map(f),
            se_expand: self.se_expand.map(f),
            compress: self.compress.map(f),
            skip: self.skip.map(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams<T = Tensor> {
    pub embed: Linear<T>,
    /// `stacks[s][l]` is layer `l` of filter stack `s`.
    pub stacks: Vec<Vec<BlockParams<T>>>,
    pub head: HeadParams<T>,
}

impl<T> DetectorParams<T> {
    /// Builds the structure for `cfg`, pulling leaves in canonical order.
    pub fn build<E>(
        cfg: &DetectorConfig,
        mut next: impl FnMut(&str, &[usize]) -> Result<T, E>,
    ) -> Result<Self, E> {
        let shapes = cfg.param_shapes();
        let mut it = shapes.iter();
        let mut take = || {
            let (name, shape) = it.next().expect("inventory covers the structure");
            next(name, shape)
        };
        let mut linear = || -> Result<Linear<T>, E> {
            Ok(Linear {
                weight: take()?,
                bias: take()?,
            })
        };
        let embed = linear()?;
        let mut stacks = Vec::with_capacity(cfg.stacks);
        for _ in 0..cfg.stacks {
            let mut layers = Vec::with_capacity(cfg.layers);
            for _ in 0..cfg.layers {
                layers.push(BlockParams {
                    expand: linear()?,
                    depthwise: linear()?,
                    se_reduce: linear()?,
                    se_expand: linear()?,
                    compress: linear()?,
                    skip: linear()?,
                });
            }
            stacks.push(layers);
        }
        let head = HeadParams {
            hidden: linear()?,
            out: linear()?,
        };
        Ok(Self { embed, stacks, head })
    }

    /// `(name, leaf)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        fn push<'a, T>(out: &mut Vec<(String, &'a T)>, prefix: &str, l: &'a Linear<T>) {
            out.push((format!("{prefix}.weight"), &l.weight));
            out.push((format!("{prefix}.bias"), &l.bias));
        }
        let mut out = Vec::new();
        push(&mut out, "embed", &self.embed);
        for (s, stack) in self.stacks.iter().enumerate() {
            for (l, block) in stack.iter().enumerate() {
                for (name, lin) in block.linears() {
                    push(&mut out, &format!("stack{s}.layer{l}.{name}"), lin);
                }
            }
        }
        push(&mut out, "head.hidden", &self.head.hidden);
        push(&mut out, "head.out", &self.head.out);
        out
    }

    pub fn leaves(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed.weight, &mut self.embed.bias];
        for stack in &mut self.stacks {
            for block in stack {
                for lin in block.linears_mut() {
                    out.push(&mut lin.weight);
                    out.push(&mut lin.bias);
                }
            }
        }
        out.extend([
            &mut self.head.hidden.weight,
            &mut self.head.hidden.bias,
            &mut self.head.out.weight,
            &mut self.head.out.bias,
        ]);
        out
    }

    /// Applies `f` to every leaf in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> DetectorParams<U> {
        DetectorParams {
            embed: self.embed.map(&mut f),
            stacks: self
                .stacks
                .iter()
                .map(|stack| stack.iter().map(|b| b.map(&mut f)).collect())
                .collect(),
            head: HeadParams {
                hidden: self.head.hidden.map(&mut f),
                out: self.head.out.map(&mut f),
            },
        }
    }
}

impl DetectorParams<Tensor> {
    /// Fan-in scaled uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    /// The fan-in of every weight is its leading dimension.
    pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |name, shape| {
            let mut t = Tensor::zeros(shape);
            if name.ends_with(".weight") {
                let bound = (6.0 / shape[0] as f64).sqrt();
                t.data_mut().iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
            }
            Ok(t)
        })
    }

    /// Rebuilds parameters from tensors in canonical order, checking shapes.
    pub fn from_tensors(cfg: &DetectorConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let expected = cfg.param_shapes().len();
        if tensors.len() != expected {
            return Err(ModelError::ParamLayout(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        Self::build(cfg, |name, shape| {
            let t = it.next().unwrap();
            if t.shape() != shape {
                return Err(ModelError::ParamLayout(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })
    }

    /// Registers every tensor as a trainable leaf on `g`.
    pub fn register(&self, g: &mut Graph) -> DetectorParams<Var> {
        self.map(|t| g.param(t.clone()))
    }

    /// Registers every tensor as a constant leaf on `g`.
    pub fn register_frozen(&self, g: &mut Graph) -> DetectorParams<Var> {
        self.map(|t| g.constant(t.clone()))
    }

    pub fn scalar_count(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.leaves().iter().all(|t| t.is_finite())
    }
}

impl DetectorParams<Var> {
    /// Gradient snapshot of every leaf.
    pub fn grads(&self, g: &Graph) -> DetectorParams<Tensor> {
        self.map(|&v| g.grad_tensor(v))
    }
}
