//! U-Net and Contextual U-Net topologies.
//!
//! Feature maps live on levels `0..=depth`; level `l` has spatial extent
//! `input / 2^l` and `base_filters · 2^l` channels. Encoder stage `l` runs two
//! convolutions at level `l` and max-pools to `l + 1`; the bottleneck sits at
//! level `depth`; decoder stage `l` upsamples from `l + 1` with a transposed
//! convolution, concatenates the mirrored encoder output and runs two
//! convolutions. In the contextual variant, a decoder stage with incoming
//! context links replaces its second convolution by a contextual
//! convolution over the link sources.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::BankVars;
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::{he_uniform_init, xavier_init, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Raw per-class logits; softmax is folded into the loss.
    SoftmaxSegmentation,
    /// Unbounded per-pixel density.
    LinearDensity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    #[default]
    Xavier,
    HeUniform,
}

/// Feature map a contextual link reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Bottleneck,
    /// Output of encoder stage `l` (before pooling).
    Encoder(usize),
    /// Output of decoder stage `l`.
    Decoder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Unet,
    ContextualUnet,
}

impl ModelKind {
    pub fn is_contextual(self) -> bool {
        self == ModelKind::ContextualUnet
    }

    pub fn build<T: Real>(self, config: &HourglassConfig, rng: &RngState) -> Result<Network<T>> {
        match self {
            ModelKind::Unet => build_unet(config, rng),
            ModelKind::ContextualUnet => build_contextual_unet(config, rng),
        }
    }
}

/// A contextual shortcut from `source` into decoder stage `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub source: FeatureSource,
    pub target: usize,
}

fn default_kernel() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourglassConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_true")]
    pub mirror_shortcuts: bool,
    /// `None` means "bottleneck into every decoder stage" for the contextual
    /// builder and "no links" for the plain one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contextual_links: Option<Vec<LinkSpec>>,
    pub head: Head,
    #[serde(default)]
    pub init: InitScheme,
    /// The density head's last convolution predicts `density_scale ×
    /// density` and its output is divided by this factor, so predictions are
    /// in objects per pixel. Training losses are measured in the scaled
    /// units. Ignored by the segmentation head.
    #[serde(default = "default_density_scale")]
    pub density_scale: f64,
}

fn default_density_scale() -> f64 {
    100.0
}

/// Name, shape and fan sizes of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

/// Links from the bottleneck into every decoder stage.
pub fn default_context_links(depth: usize) -> Vec<LinkSpec> {
    (0..depth).rev().map(|target| LinkSpec { source: FeatureSource::Bottleneck, target }).collect()
}

impl HourglassConfig {
    pub fn new(depth: usize, base_filters: usize, in_channels: usize, out_channels: usize, head: Head) -> Self {
        HourglassConfig {
            depth,
            base_filters,
            in_channels,
            out_channels,
            kernel: 3,
            mirror_shortcuts: true,
            contextual_links: None,
            head,
            init: InitScheme::Xavier,
            density_scale: default_density_scale(),
        }
    }

    pub fn with_density_scale(mut self, scale: f64) -> Self {
        self.density_scale = scale;
        self
    }

    /// Factor between the density head's loss units and objects per pixel;
    /// 1 for segmentation.
    pub fn loss_scale(&self) -> f64 {
        match self.head {
            Head::LinearDensity => self.density_scale,
            Head::SoftmaxSegmentation => 1.0,
        }
    }

    pub fn with_links(mut self, links: Vec<LinkSpec>) -> Self {
        self.contextual_links = Some(links);
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn source_level(&self, source: FeatureSource) -> usize {
        match source {
            FeatureSource::Bottleneck => self.depth,
            FeatureSource::Encoder(l) | FeatureSource::Decoder(l) => l,
        }
    }

    /// Links actually wired by the contextual builder.
    pub fn effective_links(&self) -> Vec<LinkSpec> {
        self.contextual_links.clone().unwrap_or_else(|| default_context_links(self.depth))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("depth, base_filters, in_channels and out_channels must be at least 1"));
        }
        if self.depth > 16 || self.base_filters.checked_shl(self.depth as u32).is_none() {
            return Err(Error::config(format!("depth {} is too large", self.depth)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if !(self.density_scale.is_finite() && self.density_scale > 0.0) {
            return Err(Error::config(format!("density_scale must be positive, got {}", self.density_scale)));
        }
        if self.head == Head::SoftmaxSegmentation && self.out_channels < 2 {
            return Err(Error::config("a segmentation head needs at least 2 classes"));
        }
        for link in self.contextual_links.iter().flatten() {
            self.validate_link(link)?;
        }
        Ok(())
    }

    fn validate_link(&self, link: &LinkSpec) -> Result<()> {
        if link.target >= self.depth {
            return Err(Error::config(format!(
                "link target decoder {} does not exist (depth {})",
                link.target, self.depth
            )));
        }
        let level = self.source_level(link.source);
        match link.source {
            FeatureSource::Encoder(l) if l >= self.depth => {
                return Err(Error::config(format!("link source encoder {l} does not exist")));
            }
            FeatureSource::Decoder(l) if l >= self.depth || l <= link.target => {
                return Err(Error::config(format!(
                    "link source decoder {l} is not computed before decoder {}",
                    link.target
                )));
            }
            _ => {}
        }
        if level < link.target {
            return Err(Error::config(format!(
                "link {:?} -> decoder {}: source is spatially larger than its target",
                link.source, link.target
            )));
        }
        Ok(())
    }

    /// Parameter tensors in registry order. `contextual` selects whether
    /// the context banks are wired.
    pub fn parameter_specs(&self, contextual: bool) -> Vec<ParamSpec> {
        let k = self.kernel;
        let mut specs = Vec::new();
        let mut conv = |name: String, out: usize, inp: usize, k: usize| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: Shape { n: out, c: inp, h: k, w: k },
                fan_in: inp * k * k,
                fan_out: out * k * k,
                is_bias: false,
            });
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: Shape { n: 1, c: out, h: 1, w: 1 },
                fan_in: inp * k * k,
                fan_out: out * k * k,
                is_bias: true,
            });
        };
        for l in 0..self.depth {
            let inp = if l == 0 { self.in_channels } else { self.channels(l - 1) };
            conv(format!("enc{l}.conv1"), self.channels(l), inp, k);
            conv(format!("enc{l}.conv2"), self.channels(l), self.channels(l), k);
        }
        let d = self.depth;
        conv("bottleneck.conv1".into(), self.channels(d), self.channels(d - 1), k);
        conv("bottleneck.conv2".into(), self.channels(d), self.channels(d), k);
        let links = if contextual { self.effective_links() } else { Vec::new() };
        for l in (0..d).rev() {
            let ch = self.channels(l);
            conv(format!("dec{l}.up"), ch, self.channels(l + 1), 2);
            let inp = if self.mirror_shortcuts { 2 * ch } else { ch };
            conv(format!("dec{l}.conv1"), ch, inp, k);
            conv(format!("dec{l}.conv2"), ch, ch, k);
            for (i, link) in links.iter().filter(|link| link.target == l).enumerate() {
                let src = self.channels(self.source_level(link.source));
                conv(format!("dec{l}.ctx{i}"), ch, src, k);
            }
        }
        conv("head".into(), self.out_channels, self.channels(0), 1);
        specs
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.in_channels {
            return Err(Error::shape(format!("input has {} channels, network expects {}", s.c, self.in_channels)));
        }
        let m = 1usize << self.depth;
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            let (ph, pw) = self.padded_size(s.h, s.w);
            return Err(Error::shape(format!("input {}x{} is not divisible by {m}; pad to {ph}x{pw}", s.h, s.w)));
        }
        Ok(())
    }

    /// Smallest `h' × w'` at least `h × w` that the network accepts.
    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        let m = 1usize << self.depth;
        (h.div_ceil(m) * m, w.div_ceil(m) * m)
    }

    /// Predicted output shape of every stage for an `n × in_channels × h × w`
    /// input.
    pub fn shape_program(&self, n: usize, h: usize, w: usize) -> Result<Vec<(String, Shape)>> {
        let input = Shape::new(n, self.in_channels, h, w)?;
        self.check_input(input)?;
        let at = |level: usize, c: usize| Shape { n, c, h: h >> level, w: w >> level };
        let mut program = Vec::new();
        for l in 0..self.depth {
            program.push((format!("enc{l}"), at(l, self.channels(l))));
        }
        program.push(("bottleneck".into(), at(self.depth, self.channels(self.depth))));
        for l in (0..self.depth).rev() {
            program.push((format!("dec{l}"), at(l, self.channels(l))));
        }
        program.push(("head".into(), at(0, self.out_channels)));
        Ok(program)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Built network: topology plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: HourglassConfig,
    contextual: bool,
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

/// Plain U-Net: mirror shortcuts only.
pub fn build_unet<T: Real>(config: &HourglassConfig, rng: &RngState) -> Result<Network<T>> {
    if config.contextual_links.as_ref().is_some_and(|l| !l.is_empty()) {
        return Err(Error::config("build_unet: contextual_links must be empty"));
    }
    Network::initialized(config, false, rng)
}

/// U-Net with contextual links (bottleneck into every decoder stage unless
/// the config lists others).
pub fn build_contextual_unet<T: Real>(config: &HourglassConfig, rng: &RngState) -> Result<Network<T>> {
    Network::initialized(config, true, rng)
}

impl<T: Real> Network<T> {
    /// Weights drawn from the `init/<parameter name>` stream of `rng`, biases
    /// zero. A parameter's initial value depends only on its name, shape and
    /// the seed.
    fn initialized(config: &HourglassConfig, contextual: bool, rng: &RngState) -> Result<Self> {
        config.validate()?;
        let init = rng.substream("init");
        let params = config
            .parameter_specs(contextual)
            .into_iter()
            .map(|spec| {
                let value = if spec.is_bias {
                    Tensor::zeros(spec.shape)
                } else {
                    let mut stream = init.substream(&spec.name);
                    match config.init {
                        InitScheme::Xavier => xavier_init(spec.shape, spec.fan_in, spec.fan_out, &mut stream)?,
                        InitScheme::HeUniform => he_uniform_init(spec.shape, spec.fan_in, &mut stream)?,
                    }
                };
                Ok(Parameter { name: spec.name, value })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config.clone(), contextual, params))
    }

    fn assemble(config: HourglassConfig, contextual: bool, params: Vec<Parameter<T>>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Network { config, contextual, params, index }
    }

    /// Rebuilds a network from named tensors, which must match the
    /// topology's parameter list exactly (any order).
    pub fn from_parameters(
        config: HourglassConfig,
        contextual: bool,
        mut named: HashMap<String, Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for spec in config.parameter_specs(contextual) {
            let value =
                named.remove(&spec.name).ok_or_else(|| Error::data(format!("missing parameter {}", spec.name)))?;
            if value.shape() != spec.shape {
                return Err(Error::shape(format!(
                    "parameter {} has shape {}, expected {}",
                    spec.name,
                    value.shape(),
                    spec.shape
                )));
            }
            params.push(Parameter { name: spec.name, value });
        }
        if let Some(extra) = named.keys().min() {
            return Err(Error::data(format!("unexpected parameter {extra}")));
        }
        Ok(Self::assemble(config, contextual, params))
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn is_contextual(&self) -> bool {
        self.contextual
    }

    pub fn kind(&self) -> ModelKind {
        if self.contextual {
            ModelKind::ContextualUnet
        } else {
            ModelKind::Unet
        }
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    /// Total number of scalar weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            contextual: self.contextual,
            params: self.params.iter().map(|p| Parameter { name: p.name.clone(), value: p.value.cast() }).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter as a leaf, in registry order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        self.run(tape, params, x, None)
    }

    /// Forward pass that also returns the actual output shape of each stage.
    pub fn forward_traced(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<(Var, Vec<(String, Shape)>)> {
        let mut trace = Vec::new();
        let out = self.run(tape, params, x, Some(&mut trace))?;
        Ok((out, trace))
    }

    /// Head output for `x` without recording gradients.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let params = self.bind(&mut tape);
        let input = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &params, input)?;
        Ok(tape.value(out).clone())
    }

    fn bank(&self, params: &[Var], name: &str) -> BankVars {
        let find = |suffix: &str| {
            let key = format!("{name}.{suffix}");
            params[*self.index.get(&key).unwrap_or_else(|| panic!("unknown parameter {key}"))]
        };
        BankVars { weight: find("weight"), bias: find("bias") }
    }

    fn conv_selu(&self, tape: &mut Tape<T>, params: &[Var], name: &str, x: Var) -> Result<Var> {
        let bank = self.bank(params, name);
        let y = tape.conv2d_same(x, bank.weight, bank.bias)?;
        Ok(tape.selu(y))
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        mut trace: Option<&mut Vec<(String, Shape)>>,
    ) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "forward got {} parameter handles for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let cfg = &self.config;
        cfg.check_input(tape.value(x).shape())?;
        let mut record = |tape: &Tape<T>, name: String, v: Var| {
            if let Some(trace) = trace.as_deref_mut() {
                trace.push((name, tape.value(v).shape()));
            }
        };

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x;
        for l in 0..cfg.depth {
            let a = self.conv_selu(tape, params, &format!("enc{l}.conv1"), h)?;
            let a = self.conv_selu(tape, params, &format!("enc{l}.conv2"), a)?;
            record(tape, format!("enc{l}"), a);
            skips.push(a);
            h = tape.maxpool2(a)?;
        }
        let b = self.conv_selu(tape, params, "bottleneck.conv1", h)?;
        let bottleneck = self.conv_selu(tape, params, "bottleneck.conv2", b)?;
        record(tape, "bottleneck".into(), bottleneck);

        let links = if self.contextual { cfg.effective_links() } else { Vec::new() };
        let mut decoded: Vec<Option<Var>> = vec![None; cfg.depth];
        let mut y = bottleneck;
        for l in (0..cfg.depth).rev() {
            let up = self.bank(params, &format!("dec{l}.up"));
            let u = tape.transposed_conv2d(y, up.weight, up.bias, 2)?;
            let u = if cfg.mirror_shortcuts { tape.concat_channels(skips[l], u)? } else { u };
            let u = self.conv_selu(tape, params, &format!("dec{l}.conv1"), u)?;
            let contexts = links
                .iter()
                .filter(|link| link.target == l)
                .enumerate()
                .map(|(i, link)| {
                    let source = match link.source {
                        FeatureSource::Bottleneck => bottleneck,
                        FeatureSource::Encoder(s) => skips[s],
                        FeatureSource::Decoder(s) => decoded[s].expect("validated link order"),
                    };
                    (source, self.bank(params, &format!("dec{l}.ctx{i}")))
                })
                .collect::<Vec<_>>();
            y = tape.contextual_conv_multi(u, self.bank(params, &format!("dec{l}.conv2")), &contexts)?;
            record(tape, format!("dec{l}"), y);
            decoded[l] = Some(y);
        }
        let head = self.bank(params, "head");
        let mut out = tape.conv2d_same(y, head.weight, head.bias)?;
        if self.config.loss_scale() != 1.0 {
            out = tape.scale(out, T::from_f64_lossy(1.0 / self.config.loss_scale()));
        }
        record(tape, "head".into(), out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::context_index_map;

    fn seg(depth: usize, base: usize) -> HourglassConfig {
        HourglassConfig::new(depth, base, 1, 2, Head::SoftmaxSegmentation)
    }

    fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        Tensor::from_fn(Shape::new(n, 1, h, w).unwrap(), |_, _, _, _| rng.uniform())
    }

    #[test]
    fn unet_output_shape() {
        let net: Network<f64> = build_unet(&seg(2, 8), &RngState::new(1)).unwrap();
        let y = net.predict(&input(3, 16, 16, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(3, 2, 16, 16).unwrap());
    }

    // depth 1, base 2, k 3, one input and one output channel, counted by hand
    // as out·in·k² + out per convolution:
    //   enc0.conv1  2·1·9 + 2  =  20
    //   enc0.conv2  2·2·9 + 2  =  38
    //   bott.conv1  4·2·9 + 4  =  76
    //   bott.conv2  4·4·9 + 4  = 148
    //   dec0.up     2·4·4 + 2  =  34   (2×2 kernel)
    //   dec0.conv1  2·4·9 + 2  =  74   (concat doubles the input)
    //   dec0.conv2  2·2·9 + 2  =  38
    //   head        1·2·1 + 1  =   3
    #[test]
    fn parameter_count_hand_tally() {
        let cfg = HourglassConfig::new(1, 2, 1, 1, Head::LinearDensity);
        let net: Network<f32> = build_unet(&cfg, &RngState::new(0)).unwrap();
        assert_eq!(net.parameter_count(), 20 + 38 + 76 + 148 + 34 + 74 + 38 + 3);
        // The contextual variant adds one bottleneck bank: 2·4·9 + 2 = 74.
        let ctx: Network<f32> = build_contextual_unet(&cfg, &RngState::new(0)).unwrap();
        assert_eq!(ctx.parameter_count(), 431 + 74);
    }

    #[test]
    fn mirror_concat_doubles_decoder_input() {
        let cfg = seg(3, 4);
        let net: Network<f32> = build_unet(&cfg, &RngState::new(0)).unwrap();
        for l in 0..3 {
            let w = net.param(&format!("dec{l}.conv1.weight")).unwrap();
            assert_eq!(w.shape().c, 2 * cfg.channels(l));
        }
    }

    #[test]
    fn counting_topology_output_shape() {
        let cfg = HourglassConfig::new(3, 24, 1, 1, Head::LinearDensity);
        let net: Network<f32> = build_contextual_unet(&cfg, &RngState::new(4)).unwrap();
        let x = input(1, 16, 16, 5).cast::<f32>();
        assert_eq!(net.predict(&x).unwrap().shape(), Shape::new(1, 1, 16, 16).unwrap());
        assert_eq!(net.param("dec0.ctx0.weight").unwrap().shape(), Shape::new(24, 192, 3, 3).unwrap());
    }

    #[test]
    fn empty_links_match_plain_unet_bitwise() {
        let cfg = seg(2, 4).with_links(Vec::new());
        let rng = RngState::new(9);
        let plain: Network<f32> = build_unet(&cfg, &rng).unwrap();
        let ctx: Network<f32> = build_contextual_unet(&cfg, &rng).unwrap();
        let x = input(2, 16, 16, 3).cast::<f32>();
        let (a, b) = (plain.predict(&x).unwrap(), ctx.predict(&x).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn bottleneck_links_never_clamp() {
        let cfg = seg(2, 2);
        let program = cfg.shape_program(1, 16, 16).unwrap();
        let bottleneck = program.iter().find(|(n, _)| n == "bottleneck").unwrap().1;
        assert_eq!((bottleneck.h, bottleneck.w), (4, 4));
        for (name, target) in [("dec1", 8usize), ("dec0", 16)] {
            let shape = program.iter().find(|(n, _)| n == name).unwrap().1;
            assert_eq!(shape.h, target);
            let mut hits = [0; 4];
            for i in 0..target {
                let (r, c) = context_index_map(i, i, 4, 4, target, target).unwrap();
                assert!(r < 4 && c < 4);
                hits[r] += 1;
            }
            // Every bottleneck row is used, equally often.
            assert!(hits.iter().all(|&h| h == target / 4));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = seg(2, 2);
        cfg.contextual_links = Some(vec![LinkSpec { source: FeatureSource::Encoder(0), target: 1 }]);
        assert!(matches!(build_contextual_unet::<f32>(&cfg, &RngState::new(0)), Err(Error::Config(_))));
        cfg.contextual_links = Some(vec![LinkSpec { source: FeatureSource::Decoder(0), target: 1 }]);
        assert!(build_contextual_unet::<f32>(&cfg, &RngState::new(0)).is_err());
        cfg.contextual_links = Some(vec![LinkSpec { source: FeatureSource::Bottleneck, target: 2 }]);
        assert!(build_contextual_unet::<f32>(&cfg, &RngState::new(0)).is_err());
        cfg.contextual_links = Some(default_context_links(2));
        assert!(build_unet::<f32>(&cfg, &RngState::new(0)).is_err());
        assert!(build_unet::<f32>(&seg(0, 2), &RngState::new(0)).is_err());
    }

    #[test]
    fn indivisible_input_suggests_padding() {
        let net: Network<f64> = build_unet(&seg(2, 2), &RngState::new(1)).unwrap();
        let err = net.predict(&input(1, 10, 12, 0)).unwrap_err();
        assert!(matches!(&err, Error::Shape(m) if m.contains("pad to 12x12")), "{err}");
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = seg(2, 4).with_links(vec![
            LinkSpec { source: FeatureSource::Bottleneck, target: 0 },
            LinkSpec { source: FeatureSource::Decoder(1), target: 0 },
        ]);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"bottleneck\"") && json.contains("{\"decoder\":1}"));
        assert_eq!(serde_json::from_str::<HourglassConfig>(&json).unwrap(), cfg);
    }
}
