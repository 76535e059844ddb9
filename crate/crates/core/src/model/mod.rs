//! Three-branch RGBD encoder with attention gating and a skip-connected
//! decoder producing five side outputs.
//!
//! The RGB and depth branches are plain ResNets. Their stem outputs, gated by
//! ACMs, are summed into `F0`, which seeds the fusion branch. After every
//! stage `i` the gated branch outputs are added onto the fusion output to
//! give `F_i`. The decoder upsamples `F4` five times by 2 and adds a 1×1
//! projection of the matching `F` after each of the first four steps; every
//! step ends in a 1×1 classifier.

pub mod config;

use acnet_tensor::{BnConfig, BnMode, ConvGeom, Element, Graph, PoolKind, RunningStats, Tensor, Var};
use rand::{Rng, SeedableRng};

pub use config::{AcnetConfig, BlockKind, StageSpec, Variant};

use crate::acm::{acm_forward, init_acm};
use crate::data::LabelMap;
use crate::params::{kaiming_uniform, ParamId, ParamKind, ParamStore, StatsId};
use crate::{Error, Result};

pub const STAGE_NAMES: [&str; 5] = ["conv", "layer1", "layer2", "layer3", "layer4"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        }
    }
}

/// Where an ACM sits: which branch, and stage 0 (stem) to 4 (layer4).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcmSite {
    pub branch: Modality,
    pub stage: usize,
}

impl AcmSite {
    pub fn stage_name(&self) -> &'static str {
        STAGE_NAMES[self.stage]
    }
}

#[derive(Clone, Debug)]
struct ConvRef {
    weight: ParamId,
    bias: Option<ParamId>,
    geom: ConvGeom,
}

#[derive(Clone, Debug)]
struct BnRef {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: ConvRef,
    bn: BnRef,
}

#[derive(Clone, Debug)]
struct Block {
    convs: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct AcmRef {
    site: AcmSite,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    deconv: ConvRef,
    bn: BnRef,
    skip: Option<ConvRef>,
    refine: ConvBn,
    head: ConvRef,
}

#[derive(Clone, Debug)]
struct Layout {
    rgb_stem: ConvBn,
    depth_stem: ConvBn,
    rgb_stages: Vec<Vec<Block>>,
    depth_stages: Vec<Vec<Block>>,
    fusion_stages: Vec<Vec<Block>>,
    decoder: Vec<DecoderStage>,
    acms: Vec<AcmRef>,
}

struct Builder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
}

impl<T: Element, R: Rng> Builder<'_, T, R> {
    /// Fan-out mode, as in the usual ResNet initialization.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, geom: ConvGeom, bias: bool) -> Result<ConvRef> {
        let w = kaiming_uniform(&[cout, cin, k, k], cout * k * k, self.rng)?;
        let weight = self.store.add(format!("{name}.weight"), ParamKind::Weight, w);
        let bias = bias.then(|| self.store.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[cout]).expect("nonzero")));
        Ok(ConvRef { weight, bias, geom })
    }

    /// Kernel-2, stride-2 transposed convolution; each output pixel sees
    /// exactly one input pixel per channel, so the fan-in is `cin`.
    fn deconv(&mut self, name: &str, cin: usize, cout: usize) -> Result<ConvRef> {
        let w = kaiming_uniform(&[cin, cout, 2, 2], cin, self.rng)?;
        let weight = self.store.add(format!("{name}.weight"), ParamKind::Weight, w);
        Ok(ConvRef {
            weight,
            bias: None,
            geom: ConvGeom::new(2, 0),
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<BnRef> {
        Ok(BnRef {
            gamma: self.store.add(format!("{name}.gamma"), ParamKind::BnGamma, Tensor::ones(&[c])?),
            beta: self.store.add(format!("{name}.beta"), ParamKind::BnBeta, Tensor::zeros(&[c])?),
            stats: self.store.add_stats(name, c),
        })
    }

    fn conv_bn(&mut self, name: &str, suffix: &str, cin: usize, cout: usize, k: usize, geom: ConvGeom) -> Result<ConvBn> {
        Ok(ConvBn {
            conv: self.conv(&format!("{name}.conv{suffix}"), cin, cout, k, geom, false)?,
            bn: self.bn(&format!("{name}.bn{suffix}"), cout)?,
        })
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, kind: BlockKind, stride: usize) -> Result<Block> {
        let convs = match kind {
            BlockKind::Basic => vec![
                self.conv_bn(name, "1", cin, cout, 3, ConvGeom::new(stride, 1))?,
                self.conv_bn(name, "2", cout, cout, 3, ConvGeom::new(1, 1))?,
            ],
            BlockKind::Bottleneck => {
                let width = (cout / 4).max(1);
                vec![
                    self.conv_bn(name, "1", cin, width, 1, ConvGeom::default())?,
                    self.conv_bn(name, "2", width, width, 3, ConvGeom::new(stride, 1))?,
                    self.conv_bn(name, "3", width, cout, 1, ConvGeom::default())?,
                ]
            }
        };
        let shortcut = if stride != 1 || cin != cout {
            Some(self.conv_bn(&format!("{name}.shortcut"), "", cin, cout, 1, ConvGeom::new(stride, 0))?)
        } else {
            None
        };
        Ok(Block { convs, shortcut })
    }

    fn stage(&mut self, name: &str, cin: usize, spec: &StageSpec) -> Result<Vec<Block>> {
        (0..spec.blocks)
            .map(|b| {
                let (c, s) = if b == 0 { (cin, spec.stride) } else { (spec.channels, 1) };
                self.block(&format!("{name}.{b}"), c, spec.channels, spec.block_kind, s)
            })
            .collect()
    }

    fn branch_stages(&mut self, prefix: &str, cfg: &AcnetConfig) -> Result<Vec<Vec<Block>>> {
        let mut cin = cfg.stem_channels;
        let mut out = Vec::with_capacity(4);
        for (i, spec) in cfg.stages.iter().enumerate() {
            out.push(self.stage(&format!("{prefix}.{}", STAGE_NAMES[i + 1]), cin, spec)?);
            cin = spec.channels;
        }
        Ok(out)
    }

    fn acm(&mut self, site: AcmSite, channels: usize) -> Result<AcmRef> {
        let p = init_acm::<T>(channels, self.rng)?;
        let name = format!("acm.{}.{}", site.branch.as_str(), site.stage_name());
        Ok(AcmRef {
            site,
            weight: self.store.add(format!("{name}.weight"), ParamKind::Weight, p.weight),
            bias: self.store.add(format!("{name}.bias"), ParamKind::Bias, p.bias),
        })
    }
}

/// Channel count after decoder step `j` (0-based): halving from the layer4
/// width down to the configured floor.
pub fn decoder_channels(cfg: &AcnetConfig, j: usize) -> usize {
    (cfg.stages[3].channels >> (j + 1)).max(cfg.decoder_min_channels)
}

/// Channel count of the merged feature `F_i`.
fn fused_channels(cfg: &AcnetConfig, i: usize) -> usize {
    if i == 0 {
        cfg.stem_channels
    } else {
        cfg.stages[i - 1].channels
    }
}

fn build_layout<T: Element, R: Rng>(cfg: &AcnetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Layout> {
    cfg.validate()?;
    let mut b = Builder { store, rng };
    let stem_geom = ConvGeom::new(2, 3);
    let rgb_stem = b.conv_bn("rgb.stem", "", 3, cfg.stem_channels, 7, stem_geom)?;
    let depth_stem = b.conv_bn("depth.stem", "", 1, cfg.stem_channels, 7, stem_geom)?;
    let (rgb_stages, depth_stages) = if cfg.variant == Variant::Model1 {
        (Vec::new(), Vec::new())
    } else {
        (b.branch_stages("rgb", cfg)?, b.branch_stages("depth", cfg)?)
    };
    let fusion_stages = b.branch_stages("fusion", cfg)?;

    let mut decoder = Vec::with_capacity(5);
    let mut cin = cfg.stages[3].channels;
    for j in 0..5 {
        let c = decoder_channels(cfg, j);
        let name = format!("decoder.up{}", j + 1);
        let deconv = b.deconv(&format!("{name}.deconv"), cin, c)?;
        let bn = b.bn(&format!("{name}.bn"), c)?;
        let skip = if j < 4 {
            let src = fused_channels(cfg, 3 - j);
            Some(b.conv(&format!("decoder.skip{}", j + 1), src, c, 1, ConvGeom::default(), true)?)
        } else {
            None
        };
        let refine = b.conv_bn(&format!("{name}.refine"), "", c, c, 3, ConvGeom::new(1, 1))?;
        let head = b.conv(&format!("decoder.head{}", j + 1), c, cfg.num_classes, 1, ConvGeom::default(), true)?;
        decoder.push(DecoderStage {
            deconv,
            bn,
            skip,
            refine,
            head,
        });
        cin = c;
    }

    // Registered last so that variants built from one seed share every
    // other initial value.
    let mut acms = Vec::new();
    if cfg.variant == Variant::Full {
        for stage in 0..5 {
            for branch in [Modality::Rgb, Modality::Depth] {
                acms.push(b.acm(AcmSite { branch, stage }, fused_channels(cfg, stage))?);
            }
        }
    }
    Ok(Layout {
        rgb_stem,
        depth_stem,
        rgb_stages,
        depth_stages,
        fusion_stages,
        decoder,
        acms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: BnMode,
    /// Replace every ACM by the identity map.
    pub bypass_acm: bool,
    /// Run only the RGB and depth streams; no fusion branch, no decoder.
    pub branches_only: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            mode: BnMode::Train,
            bypass_acm: false,
            branches_only: false,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: BnMode::Eval,
            ..Self::train()
        }
    }
}

/// Handles into the graph for everything a forward pass produced.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Side outputs up1..up5 at 1/16, 1/8, 1/4, 1/2 and 1/1 resolution.
    pub outputs: Vec<Var>,
    /// Attention weights `V` (N×C×1×1) per ACM, in [`Acnet::acm_sites`] order.
    pub attention: Vec<Var>,
    /// RGB branch activations: stem, then each stage that exists.
    pub rgb_features: Vec<Var>,
    pub depth_features: Vec<Var>,
    /// Merged features F0..F4.
    pub fused: Vec<Var>,
    /// One trainable leaf per parameter, in store order.
    pub params: Vec<Var>,
}

struct Ctx<'a, T> {
    graph: &'a mut Graph<T>,
    vars: &'a [Var],
    stats: &'a mut [(String, RunningStats<T>)],
    mode: BnMode,
}

impl<T: Element> Ctx<'_, T> {
    fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    fn conv(&mut self, x: Var, c: &ConvRef) -> Result<Var> {
        let b = c.bias.map(|b| self.var(b));
        Ok(self.graph.conv2d(x, self.var(c.weight), b, c.geom)?)
    }

    fn bn(&mut self, x: Var, b: &BnRef) -> Result<Var> {
        let (g, bt) = (self.var(b.gamma), self.var(b.beta));
        let stats = &mut self.stats[b.stats.0].1;
        Ok(self.graph.batch_norm2d(x, g, bt, stats, self.mode, BnConfig::default())?)
    }

    fn conv_bn(&mut self, x: Var, cb: &ConvBn) -> Result<Var> {
        let y = self.conv(x, &cb.conv)?;
        self.bn(y, &cb.bn)
    }

    fn block(&mut self, x: Var, block: &Block) -> Result<Var> {
        let mut y = x;
        for (i, cb) in block.convs.iter().enumerate() {
            y = self.conv_bn(y, cb)?;
            if i + 1 < block.convs.len() {
                y = self.graph.relu(y)?;
            }
        }
        let sc = match &block.shortcut {
            Some(cb) => self.conv_bn(x, cb)?,
            None => x,
        };
        let sum = self.graph.add(y, sc)?;
        Ok(self.graph.relu(sum)?)
    }

    fn stage(&mut self, x: Var, blocks: &[Block]) -> Result<Var> {
        blocks.iter().try_fold(x, |x, b| self.block(x, b))
    }
}

/// The network: configuration, parameter table and wiring.
#[derive(Clone, Debug)]
pub struct Acnet<T> {
    config: AcnetConfig,
    store: ParamStore<T>,
    layout: Layout,
}

impl<T: Element> Acnet<T> {
    /// Kaiming-uniform convolutions (fan-out), BN gamma 1 and beta 0, zero
    /// biases.
    pub fn new(config: AcnetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let layout = build_layout(&config, &mut store, rng)?;
        Ok(Self { config, store, layout })
    }

    /// Rebuilds the wiring for `config` around an existing parameter table,
    /// which must match it name for name and shape for shape.
    pub fn from_store(config: AcnetConfig, store: ParamStore<T>) -> Result<Self> {
        let mut fresh = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let layout = build_layout(&config, &mut fresh, &mut rng)?;
        fresh.same_layout(&store)?;
        Ok(Self { config, store, layout })
    }

    pub fn config(&self) -> &AcnetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn acm_sites(&self) -> Vec<AcmSite> {
        self.layout.acms.iter().map(|a| a.site).collect()
    }

    /// Scalars in all ACM weights and biases.
    pub fn acm_param_count(&self) -> usize {
        self.layout
            .acms
            .iter()
            .map(|a| self.store.get(a.weight).numel() + self.store.get(a.bias).numel())
            .sum()
    }

    /// Forward pass; train mode folds batch statistics into the running stats.
    pub fn forward(&mut self, graph: &mut Graph<T>, rgb: Var, depth: Var, opts: ForwardOptions) -> Result<ForwardOutput> {
        let vars = self.store.bind(graph, true);
        run_forward(&self.config, &self.layout, self.store.stats_mut(), graph, vars, rgb, depth, opts)
    }

    /// Forward pass that leaves the model untouched (running stats updates,
    /// if any, are discarded). Parameters are recorded as constants.
    pub fn forward_frozen(&self, graph: &mut Graph<T>, rgb: Var, depth: Var, opts: ForwardOptions) -> Result<ForwardOutput> {
        let vars = self.store.bind(graph, false);
        let mut stats = self.store.stats().to_vec();
        run_forward(&self.config, &self.layout, &mut stats, graph, vars, rgb, depth, opts)
    }

    /// Eval-mode class map per batch element from the full-resolution output.
    pub fn predict(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<Vec<LabelMap>> {
        let mut g = Graph::new();
        let (r, d) = (g.constant(rgb.clone()), g.constant(depth.clone()));
        let out = self.forward_frozen(&mut g, r, d, ForwardOptions::eval())?;
        argmax_classes(g.value(out.outputs[4]))
    }
}

#[allow(clippy::too_many_arguments)]
fn run_forward<T: Element>(
    cfg: &AcnetConfig,
    layout: &Layout,
    stats: &mut [(String, RunningStats<T>)],
    graph: &mut Graph<T>,
    vars: Vec<Var>,
    rgb: Var,
    depth: Var,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    let (n, c, h, w) = graph.value(rgb).dims4("acnet rgb")?;
    let (dn, dc, dh, dw) = graph.value(depth).dims4("acnet depth")?;
    if c != 3 || dc != 1 || (n, h, w) != (dn, dh, dw) {
        return Err(Error::Shape(format!("rgb {n}x{c}x{h}x{w} with depth {dn}x{dc}x{dh}x{dw}")));
    }
    config::check_input_size(h, w)?;
    if opts.mode == BnMode::Eval && stats.iter().any(|(_, s)| s.tracked == 0) {
        return Err(Error::Untrained);
    }

    let mut cx = Ctx {
        graph,
        vars: &vars,
        stats,
        mode: opts.mode,
    };
    let r0 = cx.conv_bn(rgb, &layout.rgb_stem)?;
    let r0 = cx.graph.relu(r0)?;
    let d0 = cx.conv_bn(depth, &layout.depth_stem)?;
    let d0 = cx.graph.relu(d0)?;
    let mut rgb_features = vec![r0];
    let mut depth_features = vec![d0];

    let mut r = cx.graph.pool(PoolKind::Max3x3S2, r0)?;
    let mut d = cx.graph.pool(PoolKind::Max3x3S2, d0)?;
    if opts.branches_only {
        for i in 0..layout.rgb_stages.len() {
            r = cx.stage(r, &layout.rgb_stages[i])?;
            d = cx.stage(d, &layout.depth_stages[i])?;
            rgb_features.push(r);
            depth_features.push(d);
        }
        return Ok(ForwardOutput {
            outputs: Vec::new(),
            attention: Vec::new(),
            rgb_features,
            depth_features,
            fused: Vec::new(),
            params: vars,
        });
    }

    let gated = cfg.variant == Variant::Full && !opts.bypass_acm;
    let mut attention = Vec::new();
    let mut acm_iter = layout.acms.iter();
    let mut gate = |cx: &mut Ctx<T>, x: Var| -> Result<Var> {
        if cfg.variant != Variant::Full {
            return Ok(x);
        }
        let a = acm_iter.next().expect("one ACM per site");
        if !gated {
            return Ok(x);
        }
        let out = acm_forward(cx.graph, x, cx.var(a.weight), cx.var(a.bias))?;
        attention.push(out.weights);
        Ok(out.gated)
    };

    let gr = gate(&mut cx, r0)?;
    let gd = gate(&mut cx, d0)?;
    let f0 = cx.graph.add(gr, gd)?;
    let mut fused = vec![f0];
    let mut m = cx.graph.pool(PoolKind::Max3x3S2, f0)?;
    for i in 0..4 {
        m = cx.stage(m, &layout.fusion_stages[i])?;
        if cfg.variant != Variant::Model1 {
            r = cx.stage(r, &layout.rgb_stages[i])?;
            d = cx.stage(d, &layout.depth_stages[i])?;
            rgb_features.push(r);
            depth_features.push(d);
            let gr = gate(&mut cx, r)?;
            let gd = gate(&mut cx, d)?;
            let s = cx.graph.add(m, gr)?;
            m = cx.graph.add(s, gd)?;
        }
        fused.push(m);
    }

    let mut outputs = Vec::with_capacity(5);
    let mut x = m;
    for (j, st) in layout.decoder.iter().enumerate() {
        let up = cx.graph.conv_transpose2d(x, cx.var(st.deconv.weight), None, st.deconv.geom)?;
        let up = cx.bn(up, &st.bn)?;
        x = cx.graph.relu(up)?;
        if let Some(skip) = &st.skip {
            let s = cx.conv(fused[3 - j], skip)?;
            x = cx.graph.add(x, s)?;
        }
        let y = cx.conv_bn(x, &st.refine)?;
        x = cx.graph.relu(y)?;
        outputs.push(cx.conv(x, &st.head)?);
    }
    Ok(ForwardOutput {
        outputs,
        attention,
        rgb_features,
        depth_features,
        fused,
        params: vars,
    })
}

/// Per-pixel argmax over the class axis of N×K×H×W logits; ties go to the
/// lower class index.
pub fn argmax_classes<T: Element>(logits: &Tensor<T>) -> Result<Vec<LabelMap>> {
    let (n, k, h, w) = logits.dims4("argmax")?;
    if k == 0 || k > 256 {
        return Err(Error::Shape(format!("{k} classes cannot be stored as u8")));
    }
    let plane = h * w;
    let d = logits.data();
    let mut maps = Vec::with_capacity(n);
    for b in 0..n {
        let mut map = LabelMap::filled(h, w, 1, 0);
        for p in 0..plane {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * plane + p] > d[(b * k + best) * plane + p] {
                    best = c;
                }
            }
            map.data[p] = best as u8;
        }
        maps.push(map);
    }
    Ok(maps)
}
