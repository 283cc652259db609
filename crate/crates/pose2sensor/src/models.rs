//! Network architectures: the pose→sensor regressor (a dilated temporal
//! convolution stack), the sensor feature extractor, and the linear activity
//! classifier.
//!
//! Parameter tensors live in a [`ParamSet`] and are registered in a fixed
//! order (regressor, feature extractor, classifier) so that initialization is
//! reproducible from a single seed regardless of which parts a training
//! regime later updates. Forward functions take the parameters through a
//! [`StepBinding`] and never allocate parameters themselves.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{
    kaiming_init, BatchStats, Graph, Mode, Param, ParamId, ParamSet, Scalar, StepBinding, Tensor,
    Value,
};

/// One stage of the regressor: two dilated convolutions with activation,
/// dropout, and a residual connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TCNBlockSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub dropout: f64,
}

impl TCNBlockSpec {
    pub const fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, dropout: f64) -> Self {
        TCNBlockSpec {
            in_ch,
            out_ch,
            kernel,
            dilation,
            dropout,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "block kernel must be odd and positive for symmetric joint padding, got {}",
                self.kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Config("block dilation must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "block dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Which tail the regressor uses after its channel-reduction stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorVariant {
    /// All five blocks, then the fully-connected output stage.
    Full,
    /// Segmented-clip reduction: the final pointwise block is skipped and the
    /// reduced feature map goes straight to the fully-connected stage.
    NoBlock5,
}

impl RegressorVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RegressorVariant::Full => "full",
            RegressorVariant::NoBlock5 => "no-block5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RegressorVariant::Full),
            "no-block5" => Ok(RegressorVariant::NoBlock5),
            other => Err(Error::Config(format!(
                "unknown model variant {other:?} (expected full or no-block5)"
            ))),
        }
    }
}

/// The pose→sensor regressor: four dilated blocks each followed by a
/// pointwise channel-mixing layer, an optional fifth pointwise block, and a
/// fully-connected stage mapping the flattened features to one accelerometer
/// window.
#[derive(Debug, Clone)]
pub struct RegressorSpec {
    pub blocks: [TCNBlockSpec; 5],
    /// Output widths of the pointwise layers after blocks 1–4.
    pub inter_widths: [usize; 4],
    /// Samples per output window (time extent of input and output).
    pub window: usize,
    pub joints: usize,
    pub coords: usize,
    pub residual: bool,
    pub variant: RegressorVariant,
    pub leaky_slope: f64,
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec {
            blocks: [
                TCNBlockSpec::new(3, 32, 3, 1, 0.0),
                TCNBlockSpec::new(32, 32, 3, 2, 0.2),
                TCNBlockSpec::new(32, 32, 3, 4, 0.2),
                TCNBlockSpec::new(32, 32, 3, 1, 0.2),
                TCNBlockSpec::new(16, 16, 1, 1, 0.1),
            ],
            inter_widths: [32, 32, 32, 16],
            window: 300,
            joints: 3,
            coords: 3,
            residual: true,
            variant: RegressorVariant::Full,
            leaky_slope: 0.01,
        }
    }
}

impl RegressorSpec {
    fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            b.validate()?;
        }
        if self.blocks[0].in_ch != self.coords {
            return Err(Error::Config(format!(
                "block 1 expects {} input channels but poses have {} coordinates",
                self.blocks[0].in_ch, self.coords
            )));
        }
        for i in 0..4 {
            let next_in = if i < 3 {
                self.blocks[i + 1].in_ch
            } else {
                self.blocks[4].in_ch
            };
            if self.inter_widths[i] != next_in {
                return Err(Error::Config(format!(
                    "pointwise layer {} outputs {} channels but the next block expects {}",
                    i + 1,
                    self.inter_widths[i],
                    next_in
                )));
            }
        }
        if self.window == 0 || self.joints == 0 || self.coords == 0 {
            return Err(Error::Config("window, joints, coords must be positive".into()));
        }
        Ok(())
    }

    /// Channel width entering the fully-connected stage.
    fn tail_width(&self) -> usize {
        match self.variant {
            RegressorVariant::Full => self.blocks[4].out_ch,
            RegressorVariant::NoBlock5 => self.inter_widths[3],
        }
    }

    /// Flattened feature width entering the fully-connected stage.
    pub fn fc_in(&self) -> usize {
        self.tail_width() * self.joints * self.window
    }

    /// Output width of the fully-connected stage.
    pub fn fc_out(&self) -> usize {
        self.coords * self.window
    }
}

/// The sensor feature extractor: three strided convolutions with
/// activation, batch norm, and dropout, a max-pool, and a fully-connected
/// projection to the feature width.
#[derive(Debug, Clone)]
pub struct FeatureExtractorSpec {
    pub in_ch: usize,
    pub conv_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub n_convs: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub feature_width: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        FeatureExtractorSpec {
            in_ch: 3,
            conv_ch: 9,
            kernel: 9,
            stride: 4,
            n_convs: 3,
            pool_kernel: 2,
            pool_stride: 2,
            feature_width: 100,
            dropout: 0.2,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl FeatureExtractorSpec {
    fn validate(&self) -> Result<()> {
        if self.stride != self.kernel / 2 {
            return Err(Error::Config(format!(
                "feature conv stride must be kernel/2 = {}, got {}",
                self.kernel / 2,
                self.stride
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "feature dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if self.n_convs == 0 || self.conv_ch == 0 || self.feature_width == 0 {
            return Err(Error::Config("feature extractor widths must be positive".into()));
        }
        Ok(())
    }

    /// Time extents after each convolution and after the pool, for an input
    /// of `input_len` samples.
    pub fn time_chain(&self, input_len: usize) -> Result<Vec<usize>> {
        let mut t = input_len;
        let mut chain = Vec::with_capacity(self.n_convs + 1);
        for i in 0..self.n_convs {
            if t < self.kernel {
                return Err(Error::Config(format!(
                    "input of {input_len} samples is too short for feature conv {} (needs ≥ {})",
                    i + 1,
                    self.kernel
                )));
            }
            t = (t - self.kernel) / self.stride + 1;
            chain.push(t);
        }
        if t < self.pool_kernel {
            return Err(Error::Config(format!(
                "input of {input_len} samples leaves {t} for the pool (needs ≥ {})",
                self.pool_kernel
            )));
        }
        chain.push((t - self.pool_kernel) / self.pool_stride + 1);
        Ok(chain)
    }

    /// Flattened width entering the fully-connected projection.
    pub fn flat_width(&self, input_len: usize) -> Result<usize> {
        Ok(self.conv_ch * self.time_chain(input_len)?.last().unwrap())
    }
}

/// Everything needed to build one experiment's parameter set.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub regressor: RegressorSpec,
    pub feature: FeatureExtractorSpec,
    pub n_classes: usize,
}

impl ModelBundle {
    pub fn new(regressor: RegressorSpec, feature: FeatureExtractorSpec, n_classes: usize) -> Self {
        ModelBundle {
            regressor,
            feature,
            n_classes,
        }
    }
}

/// Weight + bias parameter pair of one convolution or linear layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Batch-norm parameters: trainable scale/shift plus running-stat buffers.
#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

/// How a block's skip path is wired.
#[derive(Debug, Clone, Copy)]
pub enum Residual {
    Off,
    Identity,
    /// 1×1 projection used when input and output widths differ.
    Projected(LayerParams),
}

#[derive(Debug, Clone)]
pub struct TcnBlockParams {
    pub conv1: LayerParams,
    pub conv2: LayerParams,
    pub res: Residual,
}

#[derive(Debug, Clone)]
pub struct RegressorParams {
    pub blocks: Vec<TcnBlockParams>,
    pub inters: Vec<LayerParams>,
    pub fc: LayerParams,
}

#[derive(Debug, Clone)]
pub struct FeatureParams {
    pub convs: Vec<LayerParams>,
    pub bns: Vec<BnParams>,
    pub fc: LayerParams,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub regressor: RegressorParams,
    pub feature: FeatureParams,
    pub classifier: LayerParams,
}

fn register_layer<T: Scalar>(
    params: &mut ParamSet<T>,
    name: &str,
    w_shape: Vec<usize>,
    fan_in: usize,
    slope: f64,
    out_ch: usize,
    rng: &mut StreamRng,
) -> Result<LayerParams> {
    let w = params.register(
        &format!("{name}.weight"),
        kaiming_init(w_shape, fan_in, slope, rng)?,
        true,
    )?;
    let b = params.register(&format!("{name}.bias"), Tensor::zeros(vec![out_ch]), true)?;
    Ok(LayerParams { w, b })
}

fn register_bn<T: Scalar>(params: &mut ParamSet<T>, name: &str, ch: usize) -> Result<BnParams> {
    Ok(BnParams {
        gamma: params.register(&format!("{name}.gamma"), Tensor::full(vec![ch], T::one()), true)?,
        beta: params.register(&format!("{name}.beta"), Tensor::zeros(vec![ch]), true)?,
        mean: params.register(&format!("{name}.running_mean"), Tensor::zeros(vec![ch]), false)?,
        var: params.register(&format!("{name}.running_var"), Tensor::full(vec![ch], T::one()), false)?,
    })
}

pub(crate) fn register_tcn_block<T: Scalar>(
    params: &mut ParamSet<T>,
    name: &str,
    spec: &TCNBlockSpec,
    residual: bool,
    slope: f64,
    rng: &mut StreamRng,
) -> Result<TcnBlockParams> {
    spec.validate()?;
    let k = spec.kernel;
    let conv1 = register_layer(
        params,
        &format!("{name}.conv1"),
        vec![spec.out_ch, spec.in_ch, k, k],
        spec.in_ch * k * k,
        slope,
        spec.out_ch,
        rng,
    )?;
    let conv2 = register_layer(
        params,
        &format!("{name}.conv2"),
        vec![spec.out_ch, spec.out_ch, k, k],
        spec.out_ch * k * k,
        slope,
        spec.out_ch,
        rng,
    )?;
    let res = if !residual {
        Residual::Off
    } else if spec.in_ch == spec.out_ch {
        Residual::Identity
    } else {
        Residual::Projected(register_layer(
            params,
            &format!("{name}.res"),
            vec![spec.out_ch, spec.in_ch, 1, 1],
            spec.in_ch,
            slope,
            spec.out_ch,
            rng,
        )?)
    };
    Ok(TcnBlockParams { conv1, conv2, res })
}

/// Register every regressor parameter in deterministic order.
pub fn register_regressor<T: Scalar>(
    r: &RegressorSpec,
    params: &mut ParamSet<T>,
    rng: &mut StreamRng,
) -> Result<RegressorParams> {
    r.validate()?;
    let mut blocks = Vec::new();
    let mut inters = Vec::new();
    for i in 0..4 {
        blocks.push(register_tcn_block(
            params,
            &format!("regressor.block{}", i + 1),
            &r.blocks[i],
            r.residual,
            r.leaky_slope,
            rng,
        )?);
        inters.push(register_layer(
            params,
            &format!("regressor.inter{}", i + 1),
            vec![r.inter_widths[i], r.blocks[i].out_ch, 1, 1],
            r.blocks[i].out_ch,
            r.leaky_slope,
            r.inter_widths[i],
            rng,
        )?);
    }
    if r.variant == RegressorVariant::Full {
        blocks.push(register_tcn_block(
            params,
            "regressor.block5",
            &r.blocks[4],
            r.residual,
            r.leaky_slope,
            rng,
        )?);
    }
    let fc = register_layer(
        params,
        "regressor.fc",
        vec![r.fc_out(), r.fc_in()],
        r.fc_in(),
        r.leaky_slope,
        r.fc_out(),
        rng,
    )?;
    Ok(RegressorParams { blocks, inters, fc })
}

/// Register the feature extractor's parameters for inputs of `input_len`
/// samples.
pub fn register_feature<T: Scalar>(
    f: &FeatureExtractorSpec,
    input_len: usize,
    params: &mut ParamSet<T>,
    rng: &mut StreamRng,
) -> Result<FeatureParams> {
    f.validate()?;
    let flat = f.flat_width(input_len)?;
    let mut convs = Vec::new();
    let mut bns = Vec::new();
    for i in 0..f.n_convs {
        let in_ch = if i == 0 { f.in_ch } else { f.conv_ch };
        convs.push(register_layer(
            params,
            &format!("feature.conv{}", i + 1),
            vec![f.conv_ch, in_ch, f.kernel],
            in_ch * f.kernel,
            f.leaky_slope,
            f.conv_ch,
            rng,
        )?);
        bns.push(register_bn(params, &format!("feature.bn{}", i + 1), f.conv_ch)?);
    }
    let fc = register_layer(
        params,
        "feature.fc",
        vec![f.feature_width, flat],
        flat,
        f.leaky_slope,
        f.feature_width,
        rng,
    )?;
    Ok(FeatureParams { convs, bns, fc })
}

/// Register the classifier head.
pub fn register_classifier<T: Scalar>(
    feature_width: usize,
    n_classes: usize,
    slope: f64,
    params: &mut ParamSet<T>,
    rng: &mut StreamRng,
) -> Result<LayerParams> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    register_layer(
        params,
        "classifier.fc",
        vec![n_classes, feature_width],
        feature_width,
        slope,
        n_classes,
        rng,
    )
}

/// Register every parameter of the bundle in deterministic order
/// (regressor → feature extractor → classifier) and return the handles.
pub fn init_models<T: Scalar>(
    bundle: &ModelBundle,
    params: &mut ParamSet<T>,
    rng: &mut StreamRng,
) -> Result<ModelParams> {
    let regressor = register_regressor(&bundle.regressor, params, rng)?;
    let feature = register_feature(&bundle.feature, bundle.regressor.window, params, rng)?;
    let classifier = register_classifier(
        bundle.feature.feature_width,
        bundle.n_classes,
        bundle.feature.leaky_slope,
        params,
        rng,
    )?;
    Ok(ModelParams {
        regressor,
        feature,
        classifier,
    })
}

/// Dilated convolution preserving both axes of [batch, ch, joints, T]:
/// symmetric zero padding over joints, causal (left-only) zero padding over
/// time so no output depends on future samples.
fn causal_conv2d<T: Scalar>(
    g: &mut Graph<T>,
    x: Value,
    layer: &LayerParams,
    kernel: usize,
    dilation: usize,
    binding: &StepBinding,
) -> Result<Value> {
    let left = dilation * (kernel - 1);
    let padded = if left > 0 {
        g.pad2d(x, [0, 0, left, 0])?
    } else {
        x
    };
    g.conv2d(
        padded,
        binding.value(layer.w),
        binding.value(layer.b),
        (1, 1),
        (1, dilation),
        ((kernel - 1) / 2, 0),
    )
}

/// One regressor block: two causal dilated convolutions, each followed by
/// leaky ReLU and dropout (skipped when the rate is zero), plus the skip
/// path.
#[allow(clippy::too_many_arguments)]
pub fn tcn_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Value,
    spec: &TCNBlockSpec,
    p: &TcnBlockParams,
    binding: &StepBinding,
    slope: f64,
    mode: Mode,
    rng: &mut StreamRng,
) -> Result<Value> {
    let mut y = causal_conv2d(g, x, &p.conv1, spec.kernel, spec.dilation, binding)?;
    y = g.leaky_relu(y, slope);
    y = g.dropout(y, spec.dropout, mode, rng)?;
    y = causal_conv2d(g, y, &p.conv2, spec.kernel, spec.dilation, binding)?;
    y = g.leaky_relu(y, slope);
    y = g.dropout(y, spec.dropout, mode, rng)?;
    match &p.res {
        Residual::Off => Ok(y),
        Residual::Identity => g.add(y, x),
        Residual::Projected(proj) => {
            let shortcut = g.conv2d(
                x,
                binding.value(proj.w),
                binding.value(proj.b),
                (1, 1),
                (1, 1),
                (0, 0),
            )?;
            g.add(y, shortcut)
        }
    }
}

/// Pose windows [batch, coords, joints, T] → synthesized accelerometer
/// windows [batch, coords, T].
pub fn regressor_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Value,
    spec: &RegressorSpec,
    p: &RegressorParams,
    binding: &StepBinding,
    mode: Mode,
    rng: &mut StreamRng,
) -> Result<Value> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != spec.coords || shape[2] != spec.joints || shape[3] != spec.window
    {
        return Err(Error::Shape(format!(
            "regressor input must be [batch, {}, {}, {}], got {:?}",
            spec.coords, spec.joints, spec.window, shape
        )));
    }
    let batch = shape[0];
    let mut y = x;
    for i in 0..4 {
        y = tcn_block_forward(g, y, &spec.blocks[i], &p.blocks[i], binding, spec.leaky_slope, mode, rng)?;
        let inter = &p.inters[i];
        y = g.conv2d(
            y,
            binding.value(inter.w),
            binding.value(inter.b),
            (1, 1),
            (1, 1),
            (0, 0),
        )?;
    }
    if spec.variant == RegressorVariant::Full {
        y = tcn_block_forward(g, y, &spec.blocks[4], &p.blocks[4], binding, spec.leaky_slope, mode, rng)?;
    }
    y = g.reshape(y, vec![batch, spec.fc_in()])?;
    y = g.linear(y, binding.value(p.fc.w), binding.value(p.fc.b))?;
    g.reshape(y, vec![batch, spec.coords, spec.window])
}

/// Accelerometer windows [batch, ch, T] → feature vectors [batch, width].
#[allow(clippy::too_many_arguments)]
pub fn feature_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Value,
    spec: &FeatureExtractorSpec,
    p: &FeatureParams,
    binding: &StepBinding,
    params: &mut ParamSet<T>,
    mode: Mode,
    rng: &mut StreamRng,
) -> Result<Value> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] != spec.in_ch {
        return Err(Error::Shape(format!(
            "feature input must be [batch, {}, T], got {:?}",
            spec.in_ch, shape
        )));
    }
    let batch = shape[0];
    let mut y = x;
    for i in 0..spec.n_convs {
        let conv = &p.convs[i];
        y = g.conv1d(y, binding.value(conv.w), binding.value(conv.b), spec.stride, 1, 0)?;
        y = g.leaky_relu(y, spec.leaky_slope);
        let bn = &p.bns[i];
        let (mean, var) = params.pair_mut(bn.mean, bn.var);
        y = g.batchnorm1d(
            y,
            binding.value(bn.gamma),
            binding.value(bn.beta),
            BatchStats { mean, var },
            spec.bn_momentum,
            spec.bn_eps,
            mode,
        )?;
        y = g.dropout(y, spec.dropout, mode, rng)?;
    }
    y = g.maxpool1d(y, spec.pool_kernel, spec.pool_stride)?;
    let t_out = g.value(y).shape()[2];
    y = g.reshape(y, vec![batch, spec.conv_ch * t_out])?;
    g.linear(y, binding.value(p.fc.w), binding.value(p.fc.b))
}

/// Feature vectors [batch, width] → class logits [batch, n_classes].
pub fn classifier_forward<T: Scalar>(
    g: &mut Graph<T>,
    features: Value,
    expected_width: usize,
    p: &LayerParams,
    binding: &StepBinding,
) -> Result<Value> {
    let shape = g.value(features).shape().to_vec();
    if shape.len() != 2 || shape[1] != expected_width {
        return Err(Error::Shape(format!(
            "classifier input must be [batch, {expected_width}], got {shape:?}"
        )));
    }
    g.linear(features, binding.value(p.w), binding.value(p.b))
}

/// Total number of scalar parameters (trainable and buffers) in a set.
pub fn total_parameters<T: Scalar>(params: &ParamSet<T>) -> usize {
    params.iter().map(|(_, p): (_, &Param<T>)| p.tensor().numel()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_bundle() -> ModelBundle {
        ModelBundle::new(RegressorSpec::default(), FeatureExtractorSpec::default(), 4)
    }

    struct Built {
        bundle: ModelBundle,
        params: ParamSet<f32>,
        handles: ModelParams,
    }

    fn build(bundle: ModelBundle, seed: u64) -> Built {
        let mut params = ParamSet::new();
        let mut rng = StreamRng::new(seed, "init");
        let handles = init_models(&bundle, &mut params, &mut rng).unwrap();
        Built {
            bundle,
            params,
            handles,
        }
    }

    fn pose_input(batch: usize, spec: &RegressorSpec, seed: u64) -> Tensor<f32> {
        let mut rng = StreamRng::new(seed, "test.pose");
        Tensor::randn(
            vec![batch, spec.coords, spec.joints, spec.window],
            1.0,
            &mut rng,
        )
    }

    #[test]
    fn block1_maps_3_to_32_channels() {
        let mut b = build(desk_bundle(), 1);
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let mut rng = StreamRng::new(0, "drop");
        let spec = b.bundle.regressor.blocks[0];
        let x = g.leaf(pose_input(2, &b.bundle.regressor, 9), false);
        let y = tcn_block_forward(&mut g, x, &spec, &b.handles.regressor.blocks[0], &binding, 0.01, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(g.value(y).shape(), [2, 32, 3, 300]);
    }

    #[test]
    fn zero_input_zero_biases_give_zero_block_output() {
        let mut b = build(desk_bundle(), 2);
        // Biases are zero-initialized; with a zero input every conv output is
        // zero, leaky ReLU keeps it zero, and the skip path adds zero.
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let mut rng = StreamRng::new(0, "drop");
        let spec = b.bundle.regressor.blocks[0];
        let x = g.leaf(Tensor::zeros(vec![1, 3, 3, 40]), false);
        let y = tcn_block_forward(&mut g, x, &spec, &b.handles.regressor.blocks[0], &binding, 0.01, Mode::Eval, &mut rng)
            .unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_block_is_temporally_causal() {
        let bundle = desk_bundle();
        for (i, spec) in bundle.regressor.blocks.iter().enumerate() {
            let mut params = ParamSet::new();
            let mut rng = StreamRng::new(7 + i as u64, "init");
            let handles =
                register_tcn_block(&mut params, "probe", spec, true, 0.01, &mut rng).unwrap();
            let t_len = 40;
            let probe_t = 23;

            let mut data_rng = StreamRng::new(100 + i as u64, "probe.data");
            let base = Tensor::<f32>::randn(vec![1, spec.in_ch, 3, t_len], 1.0, &mut data_rng);
            let mut poked = base.clone();
            for c in 0..spec.in_ch {
                for j in 0..3 {
                    for t in probe_t..t_len {
                        poked.data_mut()[(c * 3 + j) * t_len + t] += 5.0;
                    }
                }
            }

            let mut outputs = Vec::new();
            for input in [&base, &poked] {
                let mut g = Graph::<f32>::new();
                let binding = params.bind(&mut g, false);
                let mut drop_rng = StreamRng::new(0, "drop");
                let x = g.leaf(input.clone(), false);
                let y = tcn_block_forward(&mut g, x, spec, &handles, &binding, 0.01, Mode::Eval, &mut drop_rng)
                    .unwrap();
                outputs.push(g.value(y).clone());
                binding.finish(&mut g, None, &mut params);
            }

            let out_ch = spec.out_ch;
            for c in 0..out_ch {
                for j in 0..3 {
                    for t in 0..probe_t {
                        let idx = (c * 3 + j) * t_len + t;
                        assert_eq!(
                            outputs[0].data()[idx].to_bits(),
                            outputs[1].data()[idx].to_bits(),
                            "block {} dilation {} leaked future input to t={t}",
                            i + 1,
                            spec.dilation
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn regressor_maps_pose_windows_to_sensor_windows() {
        let mut b = build(desk_bundle(), 3);
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let mut rng = StreamRng::new(0, "drop");
        let x = g.leaf(pose_input(4, &b.bundle.regressor, 11), false);
        let y = regressor_forward(&mut g, x, &b.bundle.regressor, &b.handles.regressor, &binding, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(g.value(y).shape(), [4, 3, 300]);
    }

    #[test]
    fn no_block_5_variant_keeps_output_shape() {
        let mut spec = RegressorSpec::default();
        spec.variant = RegressorVariant::NoBlock5;
        let bundle = ModelBundle::new(spec, FeatureExtractorSpec::default(), 27);
        let mut b = build(bundle, 4);
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let mut rng = StreamRng::new(0, "drop");
        let x = g.leaf(pose_input(2, &b.bundle.regressor, 12), false);
        let y = regressor_forward(&mut g, x, &b.bundle.regressor, &b.handles.regressor, &binding, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(g.value(y).shape(), [2, 3, 300]);
        assert!(b.params.id_of("regressor.block5.conv1.weight").is_none());
    }

    #[test]
    fn wrong_input_rank_or_extent_is_rejected() {
        let mut b = build(desk_bundle(), 5);
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let mut rng = StreamRng::new(0, "drop");
        let x = g.leaf(Tensor::zeros(vec![2, 3, 4, 300]), false);
        let err = regressor_forward(&mut g, x, &b.bundle.regressor, &b.handles.regressor, &binding, Mode::Eval, &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("regressor input"));
    }

    #[test]
    fn feature_time_chain_matches_hand_computation() {
        let spec = FeatureExtractorSpec::default();
        assert_eq!(spec.time_chain(300).unwrap(), [73, 17, 3, 1]);
        assert_eq!(spec.flat_width(300).unwrap(), 9);
        assert!(spec.time_chain(20).is_err());
    }

    #[test]
    fn feature_output_width_is_fixed_across_batches() {
        let mut b = build(desk_bundle(), 6);
        for batch in [1usize, 5] {
            let mut g = Graph::<f32>::new();
            let binding = b.params.bind(&mut g, false);
            let mut rng = StreamRng::new(0, "drop");
            let mut data_rng = StreamRng::new(21, "test.sensor");
            let x = g.leaf(Tensor::randn(vec![batch, 3, 300], 1.0, &mut data_rng), false);
            let y = feature_forward(
                &mut g,
                x,
                &b.bundle.feature,
                &b.handles.feature,
                &binding,
                &mut b.params,
                Mode::Eval,
                &mut rng,
            );
            // `bind` moved the trainable tensors out of `params`; BN buffers
            // remain accessible through `pair_mut` during the forward pass.
            let y = y.unwrap();
            assert_eq!(g.value(y).shape(), [batch, 100]);
            binding.finish(&mut g, None, &mut b.params);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut b = build(desk_bundle(), 7);
        let input = pose_input(2, &b.bundle.regressor, 30);
        let mut outs = Vec::new();
        for run in 0..2 {
            let mut g = Graph::<f32>::new();
            let binding = b.params.bind(&mut g, false);
            // Different dropout streams must not matter in eval mode.
            let mut rng = StreamRng::new(run, "drop.different");
            let x = g.leaf(input.clone(), false);
            let y = regressor_forward(&mut g, x, &b.bundle.regressor, &b.handles.regressor, &binding, Mode::Eval, &mut rng)
                .unwrap();
            outs.push(g.value(y).clone());
            binding.finish(&mut g, None, &mut b.params);
        }
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&outs[0]), bits(&outs[1]));
    }

    #[test]
    fn classifier_zero_weights_yield_bias_rows() {
        let mut b = build(desk_bundle(), 8);
        let w_id = b.handles.classifier.w;
        let b_id = b.handles.classifier.b;
        b.params.tensor_mut(w_id).fill(0.0);
        *b.params.tensor_mut(b_id) =
            Tensor::new(vec![4], vec![0.5f32, -1.0, 2.0, 0.0]).unwrap();
        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, false);
        let feats = g.leaf(Tensor::full(vec![3, 100], 0.7f32), false);
        let logits = classifier_forward(&mut g, feats, 100, &b.handles.classifier, &binding).unwrap();
        for row in 0..3 {
            assert_eq!(
                &g.value(logits).data()[row * 4..(row + 1) * 4],
                [0.5, -1.0, 2.0, 0.0]
            );
        }
    }

    #[test]
    fn initialization_is_reproducible_and_batch_independent() {
        let a = build(desk_bundle(), 42);
        let b = build(desk_bundle(), 42);
        let c = build(desk_bundle(), 43);
        assert_eq!(total_parameters(&a.params), total_parameters(&b.params));
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name(), pb.name());
            assert_eq!(pa.tensor().data(), pb.tensor().data());
        }
        // Same architecture, different seed: same count, different values.
        assert_eq!(total_parameters(&a.params), total_parameters(&c.params));
        let aw = a.params.get(a.handles.regressor.fc.w).tensor();
        let cw = c.params.get(c.handles.regressor.fc.w).tensor();
        assert_ne!(aw.data()[0], cw.data()[0]);
        // Expected fully-connected dims: 16·3·300 → 3·300.
        assert_eq!(aw.shape(), [900, 14_400]);
    }

    /// After one backward pass of the combined training loss, every trainable
    /// parameter of the regressor, feature extractor, and classifier must
    /// receive a gradient with at least one nonzero element.
    #[test]
    fn joint_loss_reaches_every_parameter() {
        // A shorter window keeps this test fast; 240 samples still leave a
        // valid feature-extractor chain (240 → 58 → 13 → 2 → 1).
        let mut rspec = RegressorSpec::default();
        rspec.window = 240;
        let bundle = ModelBundle::new(rspec, FeatureExtractorSpec::default(), 4);
        let mut b = build(bundle, 50);

        let batch = 2;
        let mut data_rng = StreamRng::new(60, "test.data");
        let pose = Tensor::<f32>::randn(vec![batch, 3, 3, 240], 1.0, &mut data_rng);
        let real = Tensor::<f32>::randn(vec![batch, 3, 240], 1.0, &mut data_rng);
        let targets = [0usize, 2];
        let weights = vec![1.0f32; 4];

        let mut g = Graph::<f32>::new();
        let binding = b.params.bind(&mut g, true);
        let mut drop_r = StreamRng::new(1, "dropout.regressor");
        let mut drop_f = StreamRng::new(1, "dropout.feature");
        let x = g.leaf(pose, false);
        let y_real = g.leaf(real, false);

        let synth = regressor_forward(&mut g, x, &b.bundle.regressor, &b.handles.regressor, &binding, Mode::Train, &mut drop_r)
            .unwrap();
        let mse = g.mse(synth, y_real).unwrap();
        let f_real = feature_forward(&mut g, y_real, &b.bundle.feature, &b.handles.feature, &binding, &mut b.params, Mode::Train, &mut drop_f)
            .unwrap();
        let f_synth = feature_forward(&mut g, synth, &b.bundle.feature, &b.handles.feature, &binding, &mut b.params, Mode::Train, &mut drop_f)
            .unwrap();
        let logits_real =
            classifier_forward(&mut g, f_real, 100, &b.handles.classifier, &binding).unwrap();
        let logits_synth =
            classifier_forward(&mut g, f_synth, 100, &b.handles.classifier, &binding).unwrap();
        let ce_real = g.weighted_cross_entropy(logits_real, &targets, &weights).unwrap();
        let ce_synth = g.weighted_cross_entropy(logits_synth, &targets, &weights).unwrap();
        let cos = g.cosine_sim(f_real, f_synth, 1e-8).unwrap();
        let dissim = g.affine(cos, -1.0, 1.0);
        let sim = g.mean_all(dissim);

        let mut loss = g.add(mse, ce_real).unwrap();
        loss = g.add(loss, ce_synth).unwrap();
        loss = g.add(loss, sim).unwrap();
        let grads = g.backward(loss).unwrap();
        let grad_vec = binding.finish(&mut g, Some(grads), &mut b.params);

        for (id, param) in b.params.iter() {
            if !param.trainable() {
                continue;
            }
            let grad = grad_vec[id.index()]
                .as_ref()
                .unwrap_or_else(|| panic!("{} received no gradient", param.name()));
            assert!(
                grad.data().iter().any(|&v| v != 0.0),
                "{} gradient is identically zero",
                param.name()
            );
        }
    }
}
