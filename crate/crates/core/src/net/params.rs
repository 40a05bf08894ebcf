use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Which frequency-mask strategy the network runs with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Raw network output.
    Plain,
    /// Plain network; mask from the input's last wavelet level applied after inference.
    Wwm,
    /// Mask from encoder detail bands, fused inside the forward pass.
    Dwt,
    /// Mask from enhanced high-frequency features, fused inside the forward pass.
    Map,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Plain, Variant::Wwm, Variant::Dwt, Variant::Map];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Wwm => "wwm",
            Variant::Dwt => "dwt",
            Variant::Map => "map",
        }
    }

    /// Whether the mask is part of the differentiated forward pass.
    pub fn fuses_in_network(self) -> bool {
        matches!(self, Variant::Dwt | Variant::Map)
    }

    /// Variant whose trained weights this variant runs on.
    pub fn checkpoint_variant(self) -> Variant {
        match self {
            Variant::Wwm => Variant::Plain,
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "wwm" => Ok(Variant::Wwm),
            "dwt" => Ok(Variant::Dwt),
            "map" => Ok(Variant::Map),
            other => arg_err(format!("unknown variant '{other}' (plain|wwm|dwt|map)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub state_dim: usize,
    pub ffn_expansion: usize,
    pub attention_heads: usize,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 3,
            state_dim: 16,
            ffn_expansion: 2,
            attention_heads: 2,
            variant: Variant::Plain,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return arg_err("depth must be >= 1");
        }
        if self.base_channels < 4 {
            return arg_err("base_channels must be >= 4");
        }
        if self.state_dim < 1 {
            return arg_err("state_dim must be >= 1");
        }
        if self.ffn_expansion < 1 {
            return arg_err("ffn_expansion must be >= 1");
        }
        if self.attention_heads < 1 || self.base_channels % self.attention_heads != 0 {
            return arg_err(format!(
                "attention_heads ({}) must divide base_channels ({})",
                self.attention_heads, self.base_channels
            ));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Total learnable scalars for this configuration.
    pub fn parameter_count(&self) -> usize {
        param_specs(self).iter().map(|s| s.numel()).sum()
    }
}

/// A named learnable array.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamTensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Zero,
    One,
    /// Uniform in `±1/sqrt(fan_in)`, fan-in being the first dimension.
    Fan,
    /// `ln(1..=s)` per row, giving `A = -(1..=s)`.
    ALog,
    /// Inverse softplus of a log-uniform step in `[1e-3, 1e-1]`.
    DtBias,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

fn spec(out: &mut Vec<ParamSpec>, name: String, dims: Vec<usize>, init: Init) {
    out.push(ParamSpec { name, dims, init });
}

pub(crate) fn lfssb_specs(out: &mut Vec<ParamSpec>, p: &str, c: usize, s: usize, e: usize) {
    spec(out, format!("{p}.ln.g"), vec![c], Init::One);
    spec(out, format!("{p}.ln.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ssm.in.w"), vec![c, c], Init::Fan);
    spec(out, format!("{p}.ssm.in.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ssm.conv.w"), vec![9, c], Init::Fan);
    spec(out, format!("{p}.ssm.conv.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ssm.dt.w"), vec![c, c], Init::Fan);
    spec(out, format!("{p}.ssm.dt.b"), vec![c], Init::DtBias);
    spec(out, format!("{p}.ssm.bproj.w"), vec![c, s], Init::Fan);
    spec(out, format!("{p}.ssm.cproj.w"), vec![c, s], Init::Fan);
    spec(out, format!("{p}.ssm.a_log"), vec![c, s], Init::ALog);
    spec(out, format!("{p}.ssm.d"), vec![c], Init::One);
    spec(out, format!("{p}.ssm.out.w"), vec![c, c], Init::Fan);
    spec(out, format!("{p}.ssm.out.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ffn.w1"), vec![c, 2 * e * c], Init::Fan);
    spec(out, format!("{p}.ffn.b1"), vec![2 * e * c], Init::Zero);
    spec(out, format!("{p}.ffn.w2"), vec![e * c, c], Init::Zero);
    spec(out, format!("{p}.ffn.b2"), vec![c], Init::Zero);
    spec(out, format!("{p}.beta"), vec![1], Init::One);
    spec(out, format!("{p}.gamma"), vec![1], Init::One);
}

pub(crate) fn hfeb_specs(out: &mut Vec<ParamSpec>, p: &str, c: usize, heads: usize, e: usize) {
    spec(out, format!("{p}.attn.ln.g"), vec![c], Init::One);
    spec(out, format!("{p}.attn.ln.b"), vec![c], Init::Zero);
    for m in ["q", "k", "v"] {
        spec(out, format!("{p}.attn.{m}.w"), vec![c, c], Init::Fan);
        spec(out, format!("{p}.attn.{m}.b"), vec![c], Init::Zero);
    }
    spec(out, format!("{p}.attn.temp"), vec![heads], Init::One);
    spec(out, format!("{p}.attn.o.w"), vec![c, c], Init::Zero);
    spec(out, format!("{p}.attn.o.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ffn.ln.g"), vec![c], Init::One);
    spec(out, format!("{p}.ffn.ln.b"), vec![c], Init::Zero);
    spec(out, format!("{p}.ffn.w1"), vec![2 * c, 2 * e * c], Init::Fan);
    spec(out, format!("{p}.ffn.b1"), vec![2 * e * c], Init::Zero);
    spec(out, format!("{p}.ffn.w2"), vec![e * c, c], Init::Zero);
    spec(out, format!("{p}.ffn.b2"), vec![c], Init::Zero);
}

pub(crate) fn skff_reduced(c: usize) -> usize {
    (c / 4).max(4)
}

pub(crate) fn skff_specs(out: &mut Vec<ParamSpec>, p: &str, c: usize) {
    let r = skff_reduced(c);
    spec(out, format!("{p}.squeeze.w"), vec![c, r], Init::Fan);
    spec(out, format!("{p}.squeeze.b"), vec![r], Init::Zero);
    spec(out, format!("{p}.excite.w"), vec![r, 3 * c], Init::Fan);
    spec(out, format!("{p}.excite.b"), vec![3 * c], Init::Zero);
}

/// Every parameter of the network in a fixed order.
///
/// Per encoder level `i`: LFSSB, SKFF, HFEB. Per decoder level: LFSSB, HFEB and
/// a pointwise head producing the three detail bands fed to the inverse
/// transform. The output convolution is zero-initialised, so a fresh model
/// maps every input to itself.
pub(crate) fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let c = cfg.base_channels;
    let (s, e, heads) = (cfg.state_dim, cfg.ffn_expansion, cfg.attention_heads);
    let mut out = Vec::new();
    spec(&mut out, "shallow.w".into(), vec![27, c], Init::Fan);
    spec(&mut out, "shallow.b".into(), vec![c], Init::Zero);
    for i in 1..=cfg.depth {
        lfssb_specs(&mut out, &format!("enc{i}.lfssb"), c, s, e);
        skff_specs(&mut out, &format!("enc{i}.skff"), c);
        hfeb_specs(&mut out, &format!("enc{i}.hfeb"), c, heads, e);
    }
    for i in (1..=cfg.depth).rev() {
        lfssb_specs(&mut out, &format!("dec{i}.lfssb"), c, s, e);
        hfeb_specs(&mut out, &format!("dec{i}.hfeb"), c, heads, e);
        spec(&mut out, format!("dec{i}.head.w"), vec![c, 3 * c], Init::Fan);
        spec(&mut out, format!("dec{i}.head.b"), vec![3 * c], Init::Zero);
    }
    spec(&mut out, "out.w".into(), vec![9 * c, 3], Init::Zero);
    spec(&mut out, "out.b".into(), vec![3], Init::Zero);
    out
}

pub(crate) fn init_params(specs: &[ParamSpec], seed: u64) -> BTreeMap<String, ParamTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for sp in specs {
        let n = sp.numel();
        let data: Vec<f32> = match sp.init {
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
            Init::Fan => {
                let bound = 1.0 / (sp.dims[0] as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::ALog => {
                let s = *sp.dims.last().unwrap();
                (0..n).map(|i| ((i % s + 1) as f32).ln()).collect()
            }
            Init::DtBias => (0..n)
                .map(|_| {
                    let log_dt = rng.gen_range((1e-3f32).ln()..(1e-1f32).ln());
                    let dt = log_dt.exp();
                    // softplus⁻¹(dt)
                    dt + (-(-dt).exp_m1()).ln()
                })
                .collect(),
        };
        params.insert(
            sp.name.clone(),
            ParamTensor {
                dims: sp.dims.clone(),
                data,
            },
        );
    }
    params
}

/// Configuration plus every learnable array, keyed by unique name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: NetConfig,
    pub params: BTreeMap<String, ParamTensor>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl ModelState {
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&param_specs(&config), seed);
        Ok(Self {
            config,
            params,
            step: 0,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(ParamTensor::numel).sum()
    }

    pub fn param(&self, name: &str) -> Option<&ParamTensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.params.get_mut(name)
    }

    /// Checks names and shapes against what the configuration requires.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = param_specs(&self.config);
        if specs.len() != self.params.len() {
            return arg_err(format!(
                "model has {} parameter arrays, configuration needs {}",
                self.params.len(),
                specs.len()
            ));
        }
        for sp in &specs {
            match self.params.get(&sp.name) {
                Some(p) if p.dims == sp.dims && p.data.len() == sp.numel() => {}
                Some(p) => {
                    return arg_err(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        sp.name, p.dims, sp.dims
                    ))
                }
                None => return arg_err(format!("missing parameter {}", sp.name)),
            }
        }
        if self
            .params
            .values()
            .any(|p| p.data.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// The parameters living under `prefix`, e.g. `"enc1.lfssb"`.
    pub fn block(&self, prefix: &str) -> BlockParams {
        let dotted = format!("{prefix}.");
        BlockParams {
            prefix: prefix.to_string(),
            tensors: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(&dotted))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// The parameters of one block, keyed by full name (`<prefix>.<local>`).
///
/// For an LFSSB the learnable residual scales are `<prefix>.beta` and
/// `<prefix>.gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub prefix: String,
    pub tensors: BTreeMap<String, ParamTensor>,
}

impl BlockParams {
    fn from_specs(prefix: &str, specs: Vec<ParamSpec>, seed: u64) -> Self {
        Self {
            prefix: prefix.to_string(),
            tensors: init_params(&specs, seed),
        }
    }

    pub fn new_lfssb(channels: usize, state_dim: usize, ffn_expansion: usize, seed: u64) -> Self {
        let mut specs = Vec::new();
        lfssb_specs(&mut specs, "lfssb", channels, state_dim, ffn_expansion);
        Self::from_specs("lfssb", specs, seed)
    }

    pub fn new_hfeb(channels: usize, heads: usize, ffn_expansion: usize, seed: u64) -> Self {
        let mut specs = Vec::new();
        hfeb_specs(&mut specs, "hfeb", channels, heads, ffn_expansion);
        Self::from_specs("hfeb", specs, seed)
    }

    pub fn new_skff(channels: usize, seed: u64) -> Self {
        let mut specs = Vec::new();
        skff_specs(&mut specs, "skff", channels);
        Self::from_specs("skff", specs, seed)
    }

    pub fn get(&self, local: &str) -> Option<&ParamTensor> {
        self.tensors.get(&format!("{}.{local}", self.prefix))
    }

    pub fn get_mut(&mut self, local: &str) -> Option<&mut ParamTensor> {
        self.tensors.get_mut(&format!("{}.{local}", self.prefix))
    }

    pub fn beta(&self) -> Option<f32> {
        self.get("beta").map(|p| p.data[0])
    }

    pub fn gamma(&self) -> Option<f32> {
        self.get("gamma").map(|p| p.data[0])
    }

    pub(crate) fn require(&self, local: &str) -> Result<&ParamTensor> {
        self.get(local)
            .ok_or_else(|| Error::Argument(format!("block {} lacks {local}", self.prefix)))
    }

    /// Overwrites every array with seeded uniform noise in `±scale`.
    pub fn randomize(&mut self, scale: f32, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.tensors.values_mut() {
            for v in &mut p.data {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_count_matches() {
        let cfg = NetConfig::default();
        let specs = param_specs(&cfg);
        let mut names: Vec<_> = specs.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        let m = ModelState::init(cfg.clone(), 1).unwrap();
        assert_eq!(m.parameter_count(), cfg.parameter_count());
        m.validate().unwrap();
    }

    #[test]
    fn count_depends_only_on_config() {
        let cfg = NetConfig::default();
        let a = ModelState::init(cfg.clone(), 1).unwrap();
        let b = ModelState::init(cfg.clone(), 99).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        let wider = NetConfig {
            base_channels: 32,
            ..cfg
        };
        assert!(wider.parameter_count() > a.parameter_count());
    }

    #[test]
    fn scan_init_values() {
        let m = ModelState::init(NetConfig::default(), 3).unwrap();
        let a = m.param("enc1.lfssb.ssm.a_log").unwrap();
        assert_eq!(a.dims, vec![16, 16]);
        assert!((a.data[15].exp() - 16.0).abs() < 1e-4);
        let dt = m.param("enc1.lfssb.ssm.dt.b").unwrap();
        for &b in &dt.data {
            let step = b.exp().ln_1p();
            assert!((0.99e-3..=1.01e-1).contains(&step), "{step}");
        }
        assert_eq!(m.block("enc2.lfssb").beta(), Some(1.0));
    }

    #[test]
    fn invalid_configs() {
        let bad = NetConfig {
            depth: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NetConfig {
            base_channels: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NetConfig {
            attention_heads: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("MAP".parse::<Variant>().unwrap(), Variant::Map);
        assert!("gan".parse::<Variant>().is_err());
        assert_eq!(Variant::Wwm.checkpoint_variant(), Variant::Plain);
    }
}
