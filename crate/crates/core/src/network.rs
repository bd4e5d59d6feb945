//! Dense convolutional encoder-decoder with a broadcast time input.
//!
//! The layer sequence for a configuration with blocks `[L1, L2, L3]` is
//!
//! ```text
//! conv k7s2p3 -> dense(L1) -> encode -> [+ time map] -> dense(L2)
//!             -> decode -> dense(L3) -> decode -> sigmoid
//! ```
//!
//! Dense-block layers and both convolutions of every encoding/decoding
//! layer are BN-ReLU-Conv units. Encoding layers halve the channel count
//! with a 1×1 convolution and then halve the spatial size with a
//! k3s2p1 convolution. Decoding layers halve channels the same way and then
//! upsample with a transposed convolution whose kernel (3 or 4, stride 2,
//! padding 1) is picked per stage so the output lands exactly on the size
//! the matching encoder stage started from. The last decoding layer emits
//! `out_channels` maps ordered as [`OUTPUT_CHANNELS`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    batch_norm_backward, batch_norm_forward, broadcast_map, broadcast_map_backward, concat_backward,
    concat_channels, conv2d_forward, conv2d_transpose_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, ActivationTape, BatchNormTape, ConcatTape, ConvSpec,
    ConvTape, Mode, RunningStats, BN_MOMENTUM,
};
use crate::tensor::{Real, Tensor};

/// Output channel order of the network and of every checkpoint.
pub const OUTPUT_CHANNELS: [&str; 3] = ["pressure", "saturation", "front_mask"];

/// Channels after a dense block of `layers` layers with growth rate `growth`.
///
/// ```
/// use deepflow::network::dense_block_channels;
/// assert_eq!(dense_block_channels(48, 24, 4), 144);
/// assert_eq!(dense_block_channels(73, 24, 9), 289);
/// ```
pub fn dense_block_channels(in_channels: usize, growth: usize, layers: usize) -> usize {
    in_channels + layers * growth
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub initial_features: usize,
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl NetworkConfig {
    /// 50×50 single-input architecture with blocks `[4, 9, 4]`, `K = 24`.
    pub fn paper() -> Self {
        NetworkConfig {
            initial_features: 48,
            growth_rate: 24,
            block_layers: vec![4, 9, 4],
            in_channels: 1,
            out_channels: 3,
            height: 50,
            width: 50,
        }
    }

    /// Reduced architecture for 32×32 grids that trains in minutes on a CPU.
    pub fn desk() -> Self {
        NetworkConfig {
            initial_features: 16,
            growth_rate: 8,
            block_layers: vec![3, 4, 3],
            in_channels: 1,
            out_channels: 3,
            height: 32,
            width: 32,
        }
    }

    /// Smallest useful configuration, for gradient checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            initial_features: 8,
            growth_rate: 4,
            block_layers: vec![1, 1, 1],
            in_channels: 1,
            out_channels: 3,
            height: 8,
            width: 8,
        }
    }

    /// Channels and spatial size after every stage.
    pub fn stages(&self) -> Result<Vec<StageShape>> {
        Ok(Layout::plan(self)?.1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidArchitecture {
                stage: "config".into(),
                reason: reason.into(),
            })
        };
        if self.block_layers.len() % 2 == 0 {
            return fail("the number of dense blocks must be odd");
        }
        if self.initial_features == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive");
        }
        if self.growth_rate == 0 && self.block_layers.iter().any(|&l| l > 0) {
            return fail("growth rate must be positive");
        }
        if self.height == 0 || self.width == 0 {
            return fail("input size must be positive");
        }
        Ok(())
    }
}

/// One row of the architecture table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Smallest latent extent accepted by [`Layout::plan`].
pub const MIN_LATENT_SIZE: usize = 2;

#[derive(Clone, Debug)]
struct BnRef {
    scale: usize,
    shift: usize,
    stats: usize,
}

#[derive(Clone, Debug)]
struct Unit {
    bn: Option<BnRef>,
    spec: ConvSpec,
    weight: usize,
    transposed: bool,
}

#[derive(Clone, Debug)]
struct Transition {
    reduce: Unit,
    resize: Unit,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: Unit,
    blocks: Vec<Vec<Unit>>,
    encoders: Vec<Transition>,
    decoders: Vec<Transition>,
    latent: usize,
    param_shapes: Vec<(String, Vec<usize>, Init)>,
    stats_names: Vec<(String, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    He { fan_in: usize },
    Xavier { fan_in: usize, fan_out: usize },
    Ones,
    Zeros,
}

struct Planner {
    params: Vec<(String, Vec<usize>, Init)>,
    stats: Vec<(String, usize)>,
}

impl Planner {
    fn unit(&mut self, prefix: &str, spec: ConvSpec, with_bn: bool, transposed: bool, last: bool) -> Unit {
        let bn = with_bn.then(|| {
            let c = spec.in_channels;
            self.params.push((format!("{prefix}.bn.scale"), vec![c], Init::Ones));
            self.params.push((format!("{prefix}.bn.shift"), vec![c], Init::Zeros));
            self.stats.push((format!("{prefix}.bn"), c));
            BnRef {
                scale: self.params.len() - 2,
                shift: self.params.len() - 1,
                stats: self.stats.len() - 1,
            }
        });
        let kk = spec.kernel * spec.kernel;
        let (shape, init) = if transposed {
            let per_out = kk / (spec.stride * spec.stride).max(1);
            let fan_in = (spec.in_channels * per_out).max(1);
            let fan_out = (spec.out_channels * per_out).max(1);
            let init = if last {
                Init::Xavier { fan_in, fan_out }
            } else {
                Init::He { fan_in }
            };
            (spec.transposed_weight_shape(), init)
        } else {
            let fan_in = spec.in_channels * kk;
            let init = if last {
                Init::Xavier {
                    fan_in,
                    fan_out: spec.out_channels * kk,
                }
            } else {
                Init::He { fan_in }
            };
            (spec.weight_shape(), init)
        };
        let name = if transposed { "convt" } else { "conv" };
        self.params.push((format!("{prefix}.{name}.weight"), shape.to_vec(), init));
        Unit {
            bn,
            spec,
            weight: self.params.len() - 1,
            transposed,
        }
    }
}

fn arch_err(stage: &str, e: Error) -> Error {
    Error::InvalidArchitecture {
        stage: stage.into(),
        reason: e.to_string(),
    }
}

impl Layout {
    fn plan(cfg: &NetworkConfig) -> Result<(Layout, Vec<StageShape>)> {
        cfg.validate()?;
        let mut pl = Planner {
            params: Vec::new(),
            stats: Vec::new(),
        };
        let mut shapes = Vec::new();
        let mut record = |name: String, c: usize, h: usize, w: usize| {
            shapes.push(StageShape {
                name,
                channels: c,
                height: h,
                width: w,
            })
        };
        let stem_spec = ConvSpec::new(cfg.in_channels, cfg.initial_features, 7, 2, 3)?;
        let (mut h, mut w) = (
            stem_spec.output_size(cfg.height).map_err(|e| arch_err("stem", e))?,
            stem_spec.output_size(cfg.width).map_err(|e| arch_err("stem", e))?,
        );
        let stem = pl.unit("stem", stem_spec, false, false, false);
        let mut c = cfg.initial_features;
        record("stem".into(), c, h, w);
        // sizes to return to on the way up, innermost last
        let mut skip_sizes = vec![(cfg.height, cfg.width)];

        let latent = cfg.block_layers.len() / 2;
        let mut blocks = Vec::new();
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for (bi, &layers) in cfg.block_layers.iter().enumerate() {
            if bi == latent {
                c += 1;
                record("time".into(), c, h, w);
            }
            let mut units = Vec::with_capacity(layers);
            for li in 0..layers {
                let spec = ConvSpec::new(c + li * cfg.growth_rate, cfg.growth_rate, 3, 1, 1)?;
                units.push(pl.unit(&format!("block{bi}.layer{li}"), spec, true, false, false));
            }
            blocks.push(units);
            c = dense_block_channels(c, cfg.growth_rate, layers);
            record(format!("block{bi}"), c, h, w);

            if bi < latent {
                let name = format!("enc{bi}");
                let half = (c / 2).max(1);
                let reduce = pl.unit(&format!("{name}.reduce"), ConvSpec::new(c, half, 1, 1, 0)?, true, false, false);
                let rs = ConvSpec::new(half, half, 3, 2, 1)?;
                skip_sizes.push((h, w));
                let nh = rs.output_size(h).map_err(|e| arch_err(&name, e))?;
                let nw = rs.output_size(w).map_err(|e| arch_err(&name, e))?;
                let resize = pl.unit(&format!("{name}.resize"), rs, true, false, false);
                encoders.push(Transition { reduce, resize });
                c = half;
                h = nh;
                w = nw;
                record(name, c, h, w);
                if bi + 1 == latent && (h < MIN_LATENT_SIZE || w < MIN_LATENT_SIZE) {
                    return Err(Error::InvalidArchitecture {
                        stage: format!("enc{bi}"),
                        reason: format!("latent size {h}x{w} is below {MIN_LATENT_SIZE}"),
                    });
                }
            } else {
                let di = bi - latent;
                let name = format!("dec{di}");
                let last = bi + 1 == cfg.block_layers.len();
                let half = (c / 2).max(1);
                let reduce = pl.unit(&format!("{name}.reduce"), ConvSpec::new(c, half, 1, 1, 0)?, true, false, false);
                let out_c = if last { cfg.out_channels } else { half };
                let (th, tw) = skip_sizes.pop().expect("one skip size per upsampling");
                let kernel = [4usize, 3]
                    .into_iter()
                    .find(|&k| {
                        let s = ConvSpec::new(half, out_c, k, 2, 1).unwrap();
                        s.transposed_output_size(h).ok() == Some(th) && s.transposed_output_size(w).ok() == Some(tw)
                    })
                    .ok_or_else(|| Error::InvalidArchitecture {
                        stage: name.clone(),
                        reason: format!("no stride-2 transposed kernel maps {h}x{w} to {th}x{tw}"),
                    })?;
                let rs = ConvSpec::new(half, out_c, kernel, 2, 1)?;
                let resize = pl.unit(&format!("{name}.resize"), rs, true, true, last);
                decoders.push(Transition { reduce, resize });
                c = out_c;
                h = th;
                w = tw;
                record(name, c, h, w);
            }
        }
        Ok((
            Layout {
                stem,
                blocks,
                encoders,
                decoders,
                latent,
                param_shapes: pl.params,
                stats_names: pl.stats,
            },
            shapes,
        ))
    }
}

/// A learnable tensor with its gradient.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// All learnable parameters, their gradients and batch-norm running
/// statistics, in a fixed order.
#[derive(Clone, Debug)]
pub struct NetworkState<T: Real> {
    pub params: Vec<Param<T>>,
    pub running: Vec<(String, RunningStats<T>)>,
    pub bn_momentum: f64,
}

impl<T: Real> NetworkState<T> {
    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// `θᵀθ` over every learnable parameter.
    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p.value.sum_sq()).sum()
    }
}

struct UnitTape<T: Real> {
    bn: Option<(BatchNormTape<T>, ActivationTape<T>)>,
    conv: ConvTape<T>,
}

enum StageTape<T: Real> {
    Block(Vec<(UnitTape<T>, ConcatTape)>),
    Transition(UnitTape<T>, UnitTape<T>),
    Time(ConcatTape),
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardTape<T: Real> {
    stem: UnitTape<T>,
    stages: Vec<StageTape<T>>,
    output: ActivationTape<T>,
    output_shape: Vec<usize>,
}

/// Gradients with respect to the network inputs.
#[derive(Clone, Debug)]
pub struct InputGradients<T: Real> {
    pub x: Tensor<T>,
    pub t: Vec<T>,
}

/// The surrogate network: architecture plus [`NetworkState`].
pub struct Network<T: Real = f32> {
    config: NetworkConfig,
    layout: Layout,
    pub state: NetworkState<T>,
    tape: Option<ForwardTape<T>>,
    last_shapes: Vec<StageShape>,
}

impl<T: Real> Clone for Network<T> {
    /// Clones architecture and state; a pending forward tape is not copied.
    fn clone(&self) -> Self {
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            state: self.state.clone(),
            tape: None,
            last_shapes: self.last_shapes.clone(),
        }
    }
}

impl<T: Real> Network<T> {
    /// Build with seeded fan-in scaled initialization: He-normal for
    /// convolutions feeding ReLU paths, Xavier-normal for the output layer.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let (layout, _) = Layout::plan(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .param_shapes
            .iter()
            .map(|(name, shape, init)| {
                let std = match *init {
                    Init::He { fan_in } => (2.0 / fan_in as f64).sqrt(),
                    Init::Xavier { fan_in, fan_out } => (2.0 / (fan_in + fan_out) as f64).sqrt(),
                    Init::Ones | Init::Zeros => 0.0,
                };
                let value = match init {
                    Init::Ones => Tensor::full(shape, T::one()),
                    Init::Zeros => Tensor::zeros(shape),
                    _ => Tensor::from_fn(shape, |_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::of(z * std)
                    }),
                };
                Param {
                    name: name.clone(),
                    grad: Tensor::zeros(shape),
                    value,
                }
            })
            .collect();
        let running = layout
            .stats_names
            .iter()
            .map(|(name, c)| (name.clone(), RunningStats::new(*c)))
            .collect();
        Ok(Network {
            config,
            layout,
            state: NetworkState {
                params,
                running,
                bn_momentum: BN_MOMENTUM,
            },
            tape: None,
            last_shapes: Vec::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Stage shapes realized by the most recent forward pass.
    pub fn realized_stages(&self) -> &[StageShape] {
        &self.last_shapes
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            state: NetworkState {
                params: self
                    .state
                    .params
                    .iter()
                    .map(|p| Param {
                        name: p.name.clone(),
                        value: p.value.cast(),
                        grad: p.grad.cast(),
                    })
                    .collect(),
                running: self
                    .state
                    .running
                    .iter()
                    .map(|(n, s)| {
                        (
                            n.clone(),
                            RunningStats {
                                mean: s.mean.cast(),
                                var: s.var.cast(),
                            },
                        )
                    })
                    .collect(),
                bn_momentum: self.state.bn_momentum,
            },
            tape: None,
            last_shapes: Vec::new(),
        }
    }

    fn check_inputs(&self, x: &Tensor<T>, t: &[T]) -> Result<usize> {
        let cfg = &self.config;
        let (n, c, h, w) = x.dims4()?;
        if (c, h, w) != (cfg.in_channels, cfg.height, cfg.width) {
            return Err(Error::ShapeMismatch {
                expected: vec![n, cfg.in_channels, cfg.height, cfg.width],
                found: x.shape().to_vec(),
            });
        }
        if t.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                found: vec![t.len()],
            });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("time input must be finite".into()));
        }
        Ok(n)
    }

    fn unit_forward(
        &self,
        unit: &Unit,
        input: &Tensor<T>,
        mode: Mode,
        stats: &mut [RunningStats<T>],
    ) -> Result<(Tensor<T>, UnitTape<T>)> {
        let p = &self.state.params;
        let (activated, bn) = match &unit.bn {
            Some(r) => {
                let (y, bt) = batch_norm_forward(
                    input,
                    &p[r.scale].value,
                    &p[r.shift].value,
                    &mut stats[r.stats],
                    mode,
                    self.state.bn_momentum,
                )?;
                let (a, at) = relu_forward(&y);
                (Some(a), Some((bt, at)))
            }
            None => (None, None),
        };
        let x = activated.as_ref().unwrap_or(input);
        let (out, conv) = if unit.transposed {
            conv2d_transpose_forward(x, &unit.spec, &p[unit.weight].value)?
        } else {
            conv2d_forward(x, &unit.spec, &p[unit.weight].value)?
        };
        Ok((out, UnitTape { bn, conv }))
    }

    fn unit_backward(&mut self, unit: &Unit, tape: UnitTape<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let p = &mut self.state.params[unit.weight];
        let mut g = tape.conv.backward(&p.value, grad, &mut p.grad)?;
        if let (Some(r), Some((bt, at))) = (&unit.bn, tape.bn) {
            g = relu_backward(at, &g)?;
            let scale = self.state.params[r.scale].value.clone();
            let mut gs = std::mem::replace(&mut self.state.params[r.scale].grad, Tensor::zeros(&[0]));
            let gb = &mut self.state.params[r.shift].grad;
            g = batch_norm_backward(bt, &scale, &g, &mut gs, gb)?;
            self.state.params[r.scale].grad = gs;
        }
        Ok(g)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Tensor<T>, t: &[T], mode: Mode) -> Result<(Tensor<T>, ForwardTape<T>, Vec<RunningStats<T>>, Vec<StageShape>)> {
        self.check_inputs(x, t)?;
        let mut stats: Vec<RunningStats<T>> = self.state.running.iter().map(|(_, s)| s.clone()).collect();
        let mut shapes = Vec::new();
        let mut note = |name: String, h: &Tensor<T>| {
            let s = h.shape();
            shapes.push(StageShape {
                name,
                channels: s[1],
                height: s[2],
                width: s[3],
            });
        };
        let lay = &self.layout;
        let (mut h, stem) = self.unit_forward(&lay.stem, x, mode, &mut stats)?;
        note("stem".into(), &h);
        let mut stages = Vec::new();
        for (bi, block) in lay.blocks.iter().enumerate() {
            if bi == lay.latent {
                let (_, _, lh, lw) = h.dims4()?;
                let map = broadcast_map(t, lh, lw);
                let (joined, ct) = concat_channels(&[&h, &map])?;
                h = joined;
                stages.push(StageTape::Time(ct));
                note("time".into(), &h);
            }
            let mut layer_tapes = Vec::with_capacity(block.len());
            for unit in block {
                let (new, ut) = self.unit_forward(unit, &h, mode, &mut stats)?;
                let (joined, ct) = concat_channels(&[&h, &new])?;
                h = joined;
                layer_tapes.push((ut, ct));
            }
            stages.push(StageTape::Block(layer_tapes));
            note(format!("block{bi}"), &h);
            let (tr, name) = if bi < lay.latent {
                (&lay.encoders[bi], format!("enc{bi}"))
            } else {
                (&lay.decoders[bi - lay.latent], format!("dec{}", bi - lay.latent))
            };
            let (mid, t1) = self.unit_forward(&tr.reduce, &h, mode, &mut stats)?;
            let (out, t2) = self.unit_forward(&tr.resize, &mid, mode, &mut stats)?;
            h = out;
            stages.push(StageTape::Transition(t1, t2));
            note(name, &h);
        }
        let (out, output) = sigmoid_forward(&h);
        let tape = ForwardTape {
            stem,
            stages,
            output,
            output_shape: out.shape().to_vec(),
        };
        Ok((out, tape, stats, shapes))
    }

    /// Forward pass returning `[N, out_channels, H, W]` in `(0, 1)`.
    /// Records a tape for [`Network::backward`]; in train mode batch
    /// statistics are used and the running statistics updated.
    pub fn forward(&mut self, x: &Tensor<T>, t: &[T], mode: Mode) -> Result<Tensor<T>> {
        let (out, tape, stats, shapes) = self.run(x, t, mode)?;
        if mode == Mode::Train {
            for ((_, dst), src) in self.state.running.iter_mut().zip(stats) {
                *dst = src;
            }
        }
        self.tape = Some(tape);
        self.last_shapes = shapes;
        Ok(out)
    }

    /// Eval-mode inference without recording a tape.
    pub fn predict(&self, x: &Tensor<T>, t: &[T]) -> Result<Tensor<T>> {
        Ok(self.run(x, t, Mode::Eval)?.0)
    }

    /// Back-propagate `grad_output` through the last recorded forward pass.
    /// Parameter gradients are overwritten; nothing is updated.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<InputGradients<T>> {
        let tape = self.tape.take().ok_or(Error::MissingTape("network"))?;
        grad_output.expect_shape(&tape.output_shape)?;
        self.state.zero_grad();
        let layout = self.layout.clone();
        let mut g = sigmoid_backward(tape.output, grad_output)?;
        let mut grad_t = Vec::new();
        let mut stages = tape.stages;
        for bi in (0..layout.blocks.len()).rev() {
            let tr = if bi < layout.latent {
                &layout.encoders[bi]
            } else {
                &layout.decoders[bi - layout.latent]
            };
            let Some(StageTape::Transition(t1, t2)) = stages.pop() else {
                unreachable!("tape order mirrors the layout")
            };
            g = self.unit_backward(&tr.resize, t2, &g)?;
            g = self.unit_backward(&tr.reduce, t1, &g)?;
            let Some(StageTape::Block(layer_tapes)) = stages.pop() else {
                unreachable!("tape order mirrors the layout")
            };
            for (unit, (ut, ct)) in layout.blocks[bi].iter().zip(layer_tapes).rev() {
                let mut parts = concat_backward(ct, &g)?;
                let g_new = parts.pop().expect("two parts");
                let mut g_prev = parts.pop().expect("two parts");
                let g_in = self.unit_backward(unit, ut, &g_new)?;
                g_prev.axpy(T::one(), &g_in)?;
                g = g_prev;
            }
            if bi == layout.latent {
                let Some(StageTape::Time(ct)) = stages.pop() else {
                    unreachable!("tape order mirrors the layout")
                };
                let mut parts = concat_backward(ct, &g)?;
                let g_map = parts.pop().expect("two parts");
                grad_t = broadcast_map_backward(&g_map)?;
                g = parts.pop().expect("two parts");
            }
        }
        let gx = self.unit_backward(&layout.stem, tape.stem, &g)?;
        Ok(InputGradients { x: gx, t: grad_t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use rand::{Rng, SeedableRng};

    fn rows(cfg: &NetworkConfig) -> Vec<(usize, usize)> {
        cfg.stages().unwrap().iter().map(|s| (s.channels, s.height)).collect()
    }

    #[test]
    fn paper_architecture_table() {
        assert_eq!(
            rows(&NetworkConfig::paper()),
            vec![(48, 25), (144, 25), (72, 13), (73, 13), (289, 13), (144, 25), (240, 25), (3, 50)]
        );
    }

    #[test]
    fn desk_and_tiny_reach_full_resolution() {
        for cfg in [NetworkConfig::desk(), NetworkConfig::tiny()] {
            let last = cfg.stages().unwrap().pop().unwrap();
            assert_eq!((last.channels, last.height, last.width), (3, cfg.height, cfg.width));
        }
        let cfg = NetworkConfig {
            initial_features: 32,
            growth_rate: 16,
            block_layers: vec![3, 5, 3],
            ..NetworkConfig::desk()
        };
        let last = cfg.stages().unwrap().pop().unwrap();
        assert_eq!((last.channels, last.height, last.width), (3, 32, 32));
    }

    #[test]
    fn empty_block_keeps_channels() {
        assert_eq!(dense_block_channels(17, 24, 0), 17);
    }

    #[test]
    fn rejects_unreachable_geometry() {
        let even = NetworkConfig {
            block_layers: vec![1, 1],
            ..NetworkConfig::tiny()
        };
        assert!(matches!(even.stages(), Err(Error::InvalidArchitecture { .. })));
        let small = NetworkConfig {
            height: 4,
            width: 4,
            ..NetworkConfig::tiny()
        };
        match small.stages() {
            Err(Error::InvalidArchitecture { stage, .. }) => assert_eq!(stage, "enc0"),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn paper_parameter_count_is_stable() {
        let a = Network::<f32>::new(NetworkConfig::paper(), 1).unwrap();
        let b = Network::<f32>::new(NetworkConfig::paper(), 2).unwrap();
        assert_eq!(a.state.num_parameters(), b.state.num_parameters());
        assert_eq!(a.state.num_parameters(), PAPER_PARAMETERS);
    }

    // Sum of all weight, scale and shift sizes for the 50×50 configuration.
    const PAPER_PARAMETERS: usize = 885_980;

    fn random_batch(cfg: &NetworkConfig, n: usize, seed: u64) -> (Tensor<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, cfg.in_channels, cfg.height, cfg.width], |_| rng.random_range(-1.0..1.0));
        let t = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
        (x, t)
    }

    #[test]
    fn forward_shapes_and_range() {
        let cfg = NetworkConfig::desk();
        let mut net = Network::<f32>::new(cfg.clone(), 3).unwrap();
        let (x, t) = random_batch(&cfg, 4, 1);
        let x: Tensor<f32> = x.cast();
        let t: Vec<f32> = t.iter().map(|&v| v as f32).collect();
        let y = net.forward(&x, &t, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[4, 3, 32, 32]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(net.realized_stages(), cfg.stages().unwrap().as_slice());
        assert!(net.forward(&x, &t[..3], Mode::Eval).is_err());
        assert!(net.forward(&x, &[f32::NAN; 4], Mode::Eval).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::<f64>::new(NetworkConfig::tiny(), 1).unwrap();
        let g = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(matches!(net.backward(&g), Err(Error::MissingTape(_))));
        let (x, t) = random_batch(net.config(), 1, 2);
        net.forward(&x, &t, Mode::Train).unwrap();
        net.backward(&g).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::MissingTape(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut net = Network::<f64>::new(NetworkConfig::tiny(), 4).unwrap();
        let (x, t) = random_batch(net.config(), 2, 5);
        let y = net.forward(&x, &t, Mode::Train).unwrap();
        let grads = net.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(net.state.params.iter().all(|p| p.grad.max_abs() == 0.0));
        assert!(grads.t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_changes_only_the_time_channel_input() {
        let cfg = NetworkConfig::tiny();
        let mut net = Network::<f64>::new(cfg.clone(), 6).unwrap();
        let (x, _) = random_batch(&cfg, 2, 7);
        let a = net.forward(&x, &[0.5, 0.5], Mode::Eval).unwrap();
        let b = net.forward(&x, &[0.9, 0.9], Mode::Eval).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn eval_is_deterministic_and_matches_train_with_full_momentum() {
        let cfg = NetworkConfig::tiny();
        let mut net = Network::<f64>::new(cfg.clone(), 8).unwrap();
        let (x, t) = random_batch(&cfg, 3, 9);
        net.state.bn_momentum = 1.0;
        let train = net.forward(&x, &t, Mode::Train).unwrap();
        // running stats now equal the batch stats of that pass
        let eval1 = net.predict(&x, &t).unwrap();
        let eval2 = net.predict(&x, &t).unwrap();
        assert_eq!(eval1, eval2);
        for (a, b) in train.data().iter().zip(eval1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stem_is_linear() {
        let cfg = NetworkConfig::tiny();
        let net = Network::<f64>::new(cfg.clone(), 10).unwrap();
        let (x, _) = random_batch(&cfg, 2, 11);
        let w = net.state.param("stem.conv.weight").unwrap().value.clone();
        let spec = ConvSpec::new(1, cfg.initial_features, 7, 2, 3).unwrap();
        let base = crate::layers::conv2d(&x, &spec, &w).unwrap();
        let scaled = crate::layers::conv2d(&x.map(|v| 2.0 * v), &spec, &w.map(|v| 0.5 * v)).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = NetworkConfig::tiny();
        let mut net = Network::<f64>::new(cfg.clone(), 12).unwrap();
        let (x, t) = random_batch(&cfg, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let probe = Tensor::from_fn(&[2, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
        // train-mode objective evaluated on fresh copies so running stats
        // do not drift between probes
        let objective = |net: &Network<f64>, x: &Tensor<f64>, t: &[f64]| {
            let mut n = net.clone();
            n.forward(x, t, Mode::Train).unwrap().dot(&probe).unwrap()
        };
        net.forward(&x, &t, Mode::Train).unwrap();
        let grads = net.backward(&probe).unwrap();
        for i in 0..net.state.params.len() {
            let analytic = net.state.params[i].grad.clone();
            let value = net.state.params[i].value.clone();
            let numeric = central_difference(value.data(), 1e-5, |v| {
                let mut n = net.clone();
                n.state.params[i].value = Tensor::from_vec(value.shape(), v.to_vec()).unwrap();
                objective(&n, &x, &t)
            });
            let err = max_relative_error(analytic.data(), &numeric);
            assert!(err <= 1e-6, "{}: {err}", net.state.params[i].name);
        }
        let nt = central_difference(&t, 1e-5, |v| objective(&net, &x, v));
        assert!(max_relative_error(&grads.t, &nt) <= 1e-6);
        assert!(grads.t.iter().all(|v| v.is_finite()));
    }
}
