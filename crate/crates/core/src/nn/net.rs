//! Network definitions: the shared encoder-decoder trunk, the saliency
//! network, the depth-prediction head and the disentangling heads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::layers::{
    downsample2x_backward, downsample2x_forward, relu_backward, relu_forward, sigmoid_backward,
    sigmoid_forward, upsample2x_backward, upsample2x_forward, BatchNorm, BnCache, BnMode, Conv2d,
    LayerKind, LayerSpec,
};
use super::param::Param;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Feature width of the trunk and the disentangling heads.
pub const DEFAULT_CHANNELS: usize = 16;

/// Mutable view of one named tensor inside a module.
pub enum Slot<'a> {
    Param(&'a mut Param),
    /// Non-trainable state such as batch-norm running statistics.
    Buffer(&'a mut Tensor4),
}

/// Anything that owns named parameters and buffers.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                n += p.len();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

impl Module for BatchNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "scale"), Slot::Param(&mut self.scale));
        f(&join(prefix, "shift"), Slot::Param(&mut self.shift));
        f(
            &join(prefix, "running_mean"),
            Slot::Buffer(&mut self.running_mean),
        );
        f(
            &join(prefix, "running_var"),
            Slot::Buffer(&mut self.running_var),
        );
    }
}

/// conv3x3 → batch norm → ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor4,
    bn: BnCache,
    output: Tensor4,
}

impl BlockCache {
    /// Appends the ReLU on/off pattern of this block.
    pub fn branch_pattern(&self, out: &mut Vec<bool>) {
        out.extend(self.output.data().iter().map(|&v| v > 0.0));
    }
}

impl ConvBlock {
    pub fn new(in_channels: usize, out_channels: usize, seeds: &SeedTree) -> Self {
        Self {
            conv: Conv2d::new(in_channels, out_channels, 3, &mut seeds.stream("conv")),
            bn: BatchNorm::new(out_channels),
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: BnMode) -> Result<(Tensor4, BlockCache)> {
        let z = self.conv.forward(x)?;
        let (b, bn) = self.bn.forward(&z, mode)?;
        let y = relu_forward(&b);
        Ok((
            y.clone(),
            BlockCache {
                input: x.clone(),
                bn,
                output: y,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BlockCache, grad_out: &Tensor4) -> Result<Tensor4> {
        let g = relu_backward(&cache.output, grad_out);
        let g = self.bn.backward(&cache.bn, &g)?;
        self.conv.backward(&cache.input, &g)
    }

    pub fn specs(&self) -> [LayerSpec; 3] {
        let [cout, cin, _, _] = self.conv.weight.value.shape();
        [
            LayerSpec::new(LayerKind::Conv3x3, cin, cout),
            LayerSpec::new(LayerKind::BatchNorm, cout, cout),
            LayerSpec::new(LayerKind::Relu, cout, cout),
        ]
    }
}

impl Module for ConvBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}

/// Encoder-decoder trunk: four conv blocks with two 2× downsamplings, then
/// two 2× upsamplings with additive skip connections back to input
/// resolution. Input H and W must be multiples of 4.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub blocks: [ConvBlock; 4],
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    blocks: [BlockCache; 4],
}

impl TrunkCache {
    pub fn branch_pattern(&self, out: &mut Vec<bool>) {
        for b in &self.blocks {
            b.branch_pattern(out);
        }
    }
}

impl Trunk {
    pub fn new(in_channels: usize, channels: usize, seeds: &SeedTree) -> Self {
        Self {
            blocks: [
                ConvBlock::new(in_channels, channels, &seeds.child("b1")),
                ConvBlock::new(channels, channels, &seeds.child("b2")),
                ConvBlock::new(channels, channels, &seeds.child("b3")),
                ConvBlock::new(channels, channels, &seeds.child("b4")),
            ],
        }
    }

    pub fn channels(&self) -> usize {
        self.blocks[3].bn.channels()
    }

    pub fn forward(&mut self, x: &Tensor4, mode: BnMode) -> Result<(Tensor4, TrunkCache)> {
        if !x.h().is_multiple_of(4) || !x.w().is_multiple_of(4) {
            return Err(Error::InvalidParameter(format!(
                "trunk input {}x{} must be a multiple of 4",
                x.w(),
                x.h()
            )));
        }
        let (a1, c1) = self.blocks[0].forward(x, mode)?;
        let (a2, c2) = self.blocks[1].forward(&downsample2x_forward(&a1)?, mode)?;
        let (a3, c3) = self.blocks[2].forward(&downsample2x_forward(&a2)?, mode)?;
        let (a4, c4) = self.blocks[3].forward(&a3, mode)?;
        let u1 = upsample2x_forward(&a4).add(&a2)?;
        let out = upsample2x_forward(&u1).add(&a1)?;
        Ok((
            out,
            TrunkCache {
                blocks: [c1, c2, c3, c4],
            },
        ))
    }

    pub fn backward(&mut self, cache: &TrunkCache, grad_out: &Tensor4) -> Result<Tensor4> {
        let mut g_a1 = grad_out.clone();
        let g_u1 = upsample2x_backward(grad_out);
        let mut g_a2 = g_u1.clone();
        let g_a4 = upsample2x_backward(&g_u1);
        let g_a3 = self.blocks[3].backward(&cache.blocks[3], &g_a4)?;
        let g_p2 = self.blocks[2].backward(&cache.blocks[2], &g_a3)?;
        g_a2 = g_a2.add(&downsample2x_backward(&g_p2))?;
        let g_p1 = self.blocks[1].backward(&cache.blocks[1], &g_a2)?;
        g_a1 = g_a1.add(&downsample2x_backward(&g_p1))?;
        self.blocks[0].backward(&cache.blocks[0], &g_a1)
    }

    /// Linear layer listing; skip connections are additive and not shown.
    pub fn specs(&self) -> Vec<LayerSpec> {
        let c = self.channels();
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.specs());
            if i < 2 {
                out.push(LayerSpec::new(LayerKind::Downsample2x, c, c));
            }
        }
        out.push(LayerSpec::new(LayerKind::Upsample2x, c, c));
        out.push(LayerSpec::new(LayerKind::Upsample2x, c, c));
        out
    }
}

impl Module for Trunk {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{}", i + 1)), f);
        }
    }
}

/// conv1x1 → sigmoid, mapping features to one probability channel.
#[derive(Debug, Clone)]
pub struct SigmoidHead {
    pub conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Tensor4,
    output: Tensor4,
}

impl SigmoidHead {
    pub fn new(channels: usize, seeds: &SeedTree) -> Self {
        Self {
            conv: Conv2d::new(channels, 1, 1, &mut seeds.stream("conv")),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, HeadCache)> {
        let y = sigmoid_forward(&self.conv.forward(x)?);
        Ok((
            y.clone(),
            HeadCache {
                input: x.clone(),
                output: y,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HeadCache, grad_out: &Tensor4) -> Result<Tensor4> {
        let g = sigmoid_backward(&cache.output, grad_out);
        self.conv.backward(&cache.input, &g)
    }
}

impl Module for SigmoidHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }
}

/// RGB → single-channel saliency probability at input resolution.
#[derive(Debug, Clone)]
pub struct SaliencyNet {
    pub trunk: Trunk,
    pub head: SigmoidHead,
}

#[derive(Debug, Clone)]
pub struct SaliencyCache {
    trunk: TrunkCache,
    head: HeadCache,
}

impl SaliencyCache {
    pub fn branch_pattern(&self, out: &mut Vec<bool>) {
        self.trunk.branch_pattern(out);
    }
}

impl SaliencyNet {
    pub fn forward(&mut self, rgb: &Tensor4, mode: BnMode) -> Result<(Tensor4, SaliencyCache)> {
        let (f, trunk) = self.trunk.forward(rgb, mode)?;
        let (y, head) = self.head.forward(&f)?;
        Ok((y, SaliencyCache { trunk, head }))
    }

    pub fn backward(&mut self, cache: &SaliencyCache, grad_out: &Tensor4) -> Result<Tensor4> {
        let g = self.head.backward(&cache.head, grad_out)?;
        self.trunk.backward(&cache.trunk, &g)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut s = self.trunk.specs();
        let c = self.trunk.channels();
        s.push(LayerSpec::new(LayerKind::Conv1x1, c, 1));
        s.push(LayerSpec::new(LayerKind::Sigmoid, 1, 1));
        s
    }
}

impl Module for SaliencyNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Three conv blocks producing a disentangled feature tensor, followed by a
/// sigmoid head producing the corresponding depth component.
#[derive(Debug, Clone)]
pub struct DisentangleHead {
    pub blocks: [ConvBlock; 3],
    pub out: SigmoidHead,
}

#[derive(Debug, Clone)]
pub struct DisentangleCache {
    blocks: [BlockCache; 3],
    out: HeadCache,
}

impl DisentangleCache {
    pub fn branch_pattern(&self, out: &mut Vec<bool>) {
        for b in &self.blocks {
            b.branch_pattern(out);
        }
    }
}

impl DisentangleHead {
    pub fn new(channels: usize, seeds: &SeedTree) -> Self {
        Self {
            blocks: [
                ConvBlock::new(channels, channels, &seeds.child("b1")),
                ConvBlock::new(channels, channels, &seeds.child("b2")),
                ConvBlock::new(channels, channels, &seeds.child("b3")),
            ],
            out: SigmoidHead::new(channels, &seeds.child("out")),
        }
    }

    /// Returns `(features, depth component, cache)`.
    pub fn forward(
        &mut self,
        x: &Tensor4,
        mode: BnMode,
    ) -> Result<(Tensor4, Tensor4, DisentangleCache)> {
        let (h1, c1) = self.blocks[0].forward(x, mode)?;
        let (h2, c2) = self.blocks[1].forward(&h1, mode)?;
        let (feat, c3) = self.blocks[2].forward(&h2, mode)?;
        let (d, out) = self.out.forward(&feat)?;
        Ok((
            feat,
            d,
            DisentangleCache {
                blocks: [c1, c2, c3],
                out,
            },
        ))
    }

    /// Backward given upstream gradients for both outputs.
    pub fn backward(
        &mut self,
        cache: &DisentangleCache,
        grad_feat: &Tensor4,
        grad_d: &Tensor4,
    ) -> Result<Tensor4> {
        let g = self.out.backward(&cache.out, grad_d)?.add(grad_feat)?;
        let g = self.blocks[2].backward(&cache.blocks[2], &g)?;
        let g = self.blocks[1].backward(&cache.blocks[1], &g)?;
        self.blocks[0].backward(&cache.blocks[0], &g)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut s: Vec<LayerSpec> = self.blocks.iter().flat_map(|b| b.specs()).collect();
        let c = self.blocks[2].bn.channels();
        s.push(LayerSpec::new(LayerKind::Conv1x1, c, 1));
        s.push(LayerSpec::new(LayerKind::Sigmoid, 1, 1));
        s
    }
}

impl Module for DisentangleHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{}", i + 1)), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }
}

pub fn build_saliency_net(channels: usize, seeds: &SeedTree) -> SaliencyNet {
    SaliencyNet {
        trunk: Trunk::new(3, channels, &seeds.child("trunk")),
        head: SigmoidHead::new(channels, &seeds.child("head")),
    }
}

/// Depth network: the trunk alone, producing the depth feature tensor.
pub fn build_depth_net(channels: usize, seeds: &SeedTree) -> Trunk {
    Trunk::new(3, channels, seeds)
}

pub fn build_depth_head(channels: usize, seeds: &SeedTree) -> SigmoidHead {
    SigmoidHead::new(channels, seeds)
}

pub fn build_dsal_head(channels: usize, seeds: &SeedTree) -> DisentangleHead {
    DisentangleHead::new(channels, seeds)
}

pub fn build_dnonsal_head(channels: usize, seeds: &SeedTree) -> DisentangleHead {
    DisentangleHead::new(channels, seeds)
}

/// Collects `(name, tensor)` for every parameter and buffer, in visit order.
pub fn named_tensors(module: &mut dyn Module, prefix: &str) -> Vec<(String, Tensor4)> {
    let mut out = Vec::new();
    module.visit(prefix, &mut |name, slot| {
        let t = match slot {
            Slot::Param(p) => p.value.clone(),
            Slot::Buffer(b) => b.clone(),
        };
        out.push((
            String::from(name),
            Tensor4::from_vec(t.shape(), t.into_data()).expect("shape"),
        ));
    });
    out
}

/// True when every value and gradient in the module is finite.
pub fn module_finite(module: &mut dyn Module) -> bool {
    let mut ok = true;
    module.visit("", &mut |_, slot| {
        ok &= match slot {
            Slot::Param(p) => p.value.all_finite(),
            Slot::Buffer(b) => b.all_finite(),
        };
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{
        kink_aware_error, kink_aware_gradient_with, probe_loss, random_tensor, COMPOSITION_EPS,
    };
    use crate::nn::layers::check_chain;

    #[test]
    fn output_shapes_and_ranges() {
        let seeds = SeedTree::new(7);
        let mut sal = build_saliency_net(DEFAULT_CHANNELS, &seeds.child("sal"));
        let x = random_tensor([1, 3, 64, 64], &mut seeds.stream("x")).map_values(|v| 0.5 + 0.5 * v);
        let (y, _) = sal.forward(&x, BnMode::Train).unwrap();
        assert_eq!(y.shape(), [1, 1, 64, 64]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let mut depth = build_depth_net(DEFAULT_CHANNELS, &seeds.child("depth"));
        let (f, _) = depth.forward(&x, BnMode::Train).unwrap();
        assert_eq!(f.shape(), [1, 16, 64, 64]);

        let mut ds = build_dsal_head(16, &seeds.child("ds"));
        let mut dn = build_dnonsal_head(16, &seeds.child("dn"));
        let (fs, d, _) = ds.forward(&f, BnMode::Train).unwrap();
        let (fn_, _, _) = dn.forward(&f, BnMode::Train).unwrap();
        assert_eq!(fs.add(&fn_).unwrap().shape(), f.shape());
        assert_eq!(d.shape(), [1, 1, 64, 64]);

        check_chain(&sal.specs()).unwrap();
        check_chain(&ds.specs()).unwrap();
        assert!(sal
            .forward(&Tensor4::zeros([1, 3, 6, 6]), BnMode::Train)
            .is_err());
    }

    #[test]
    fn trunk_and_head_gradients() {
        let seeds = SeedTree::new(8);
        let x = random_tensor([2, 3, 8, 8], &mut seeds.stream("x"));
        let sal = build_saliency_net(4, &seeds.child("sal"));
        let probe = random_tensor([2, 1, 8, 8], &mut seeds.stream("p"));
        let eval = |net: &SaliencyNet, input: &Tensor4| {
            let (y, c) = net.clone().forward(input, BnMode::Train).unwrap();
            let mut pattern = Vec::new();
            c.branch_pattern(&mut pattern);
            (probe_loss(&y, &probe), pattern)
        };

        let mut n = sal.clone();
        let (_, c) = n.forward(&x, BnMode::Train).unwrap();
        let gx = n.backward(&c, &probe).unwrap();
        let mut xv = x.data().to_vec();
        let numeric = kink_aware_gradient_with(&mut xv, COMPOSITION_EPS, |v| {
            eval(&sal, &Tensor4::from_vec(x.shape(), v.to_vec()).unwrap())
        });
        let e = kink_aware_error(gx.data(), &numeric);
        assert!(e.passes(), "saliency input grad {e:?}");

        let mut n = sal.clone();
        n.zero_grad();
        let (_, c) = n.forward(&x, BnMode::Train).unwrap();
        n.backward(&c, &probe).unwrap();
        let analytic = n.trunk.blocks[1].conv.weight.grad().to_vec();
        let mut wv = sal.trunk.blocks[1].conv.weight.value.data().to_vec();
        let numeric = kink_aware_gradient_with(&mut wv, COMPOSITION_EPS, |v| {
            let mut m = sal.clone();
            m.trunk.blocks[1]
                .conv
                .weight
                .value
                .data_mut()
                .copy_from_slice(v);
            eval(&m, &x)
        });
        let e = kink_aware_error(&analytic, &numeric);
        assert!(e.passes(), "trunk weight grad {e:?}");
    }

    #[test]
    fn visit_names_are_unique() {
        let mut sal = build_saliency_net(4, &SeedTree::new(1));
        let names: Vec<String> = named_tensors(&mut sal, "sal")
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&String::from("sal.trunk.block1.bn.running_var")));
    }
}
