use mres_core::ProblemKind;
use mres_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;
use crate::{PolicyError, Result};

/// Architecture hyperparameters. The defaults are the full-size network;
/// tests shrink them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub problem: ProblemKind,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    /// Hidden width of the per-layer distance-bias MLP.
    pub phi_hidden: usize,
    /// Logits are squashed to `clip * tanh(.)`.
    pub clip: f64,
    pub featurizer: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            problem: ProblemKind::Tsp,
            d_model: 128,
            heads: 8,
            head_dim: 16,
            ff_dim: 512,
            layers: 3,
            phi_hidden: 16,
            clip: 10.0,
            featurizer: "invariant".into(),
        }
    }
}

impl ModelConfig {
    /// A narrow network for fast tests.
    pub fn tiny(problem: ProblemKind) -> Self {
        ModelConfig {
            problem,
            d_model: 16,
            heads: 2,
            head_dim: 8,
            ff_dim: 32,
            layers: 2,
            phi_hidden: 4,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.heads * self.head_dim != self.d_model {
            return Err(PolicyError::invalid(format!(
                "heads ({}) x head_dim ({}) must equal d_model ({})",
                self.heads, self.head_dim, self.d_model
            )));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.phi_hidden == 0 {
            return Err(PolicyError::invalid("layers, ff_dim and phi_hidden must be positive"));
        }
        if !(self.clip > 0.0) {
            return Err(PolicyError::invalid("clip must be positive"));
        }
        Ok(())
    }

    pub(crate) fn context_dim(&self) -> usize {
        3 * self.d_model
            + match self.problem {
                ProblemKind::Tsp => 0,
                ProblemKind::Cvrp => 1,
            }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wqkv: usize,
    pub phi_w1: usize,
    pub phi_b1: usize,
    pub phi_w2: usize,
    pub phi_b2: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

/// Positions of every named tensor in [`PolicyParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub wx: usize,
    pub bx: usize,
    pub layers: Vec<LayerIdx>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_ctx: usize,
    pub v_first: usize,
    pub v_cur: usize,
    /// Glimpse keys, glimpse values and logit keys side by side.
    pub w_kvl: usize,
    pub w_out: usize,
    pub w_dist: usize,
}

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    FanIn(usize),
    Const(f64),
}

struct Builder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push((name, shape.to_vec(), init));
        self.specs.len() - 1
    }
}

fn layout(cfg: &ModelConfig, node_dim: usize) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let d = cfg.d_model;
    let mut b = Builder { specs: Vec::new() };
    let wx = b.add("enc.input.w".into(), &[node_dim, d], Init::FanIn(node_dim));
    let bx = b.add("enc.input.b".into(), &[1, d], Init::FanIn(node_dim));
    let layers = (0..cfg.layers)
        .map(|l| {
            let p = |s: &str| format!("enc.{}.{}", l, s);
            LayerIdx {
                ln1_g: b.add(p("ln1.g"), &[1, d], Init::Const(1.0)),
                ln1_b: b.add(p("ln1.b"), &[1, d], Init::Const(0.0)),
                wqkv: b.add(p("attn.qkv"), &[d, 3 * d], Init::FanIn(d)),
                phi_w1: b.add(p("phi.w1"), &[1, cfg.phi_hidden], Init::FanIn(1)),
                phi_b1: b.add(p("phi.b1"), &[1, cfg.phi_hidden], Init::FanIn(1)),
                phi_w2: b.add(p("phi.w2"), &[cfg.phi_hidden, cfg.heads], Init::FanIn(cfg.phi_hidden)),
                phi_b2: b.add(p("phi.b2"), &[1, cfg.heads], Init::FanIn(cfg.phi_hidden)),
                wo: b.add(p("attn.out.w"), &[d, d], Init::FanIn(d)),
                bo: b.add(p("attn.out.b"), &[1, d], Init::FanIn(d)),
                ln2_g: b.add(p("ln2.g"), &[1, d], Init::Const(1.0)),
                ln2_b: b.add(p("ln2.b"), &[1, d], Init::Const(0.0)),
                ff_w1: b.add(p("ff.w1"), &[d, cfg.ff_dim], Init::FanIn(d)),
                ff_b1: b.add(p("ff.b1"), &[1, cfg.ff_dim], Init::FanIn(d)),
                ff_w2: b.add(p("ff.w2"), &[cfg.ff_dim, d], Init::FanIn(cfg.ff_dim)),
                ff_b2: b.add(p("ff.b2"), &[1, d], Init::FanIn(cfg.ff_dim)),
            }
        })
        .collect();
    let lnf_g = b.add("enc.final_ln.g".into(), &[1, d], Init::Const(1.0));
    let lnf_b = b.add("enc.final_ln.b".into(), &[1, d], Init::Const(0.0));
    let ctx = cfg.context_dim();
    let w_ctx = b.add("dec.context".into(), &[ctx, d], Init::FanIn(ctx));
    let v_first = b.add("dec.placeholder.first".into(), &[1, d], Init::FanIn(1));
    let v_cur = b.add("dec.placeholder.current".into(), &[1, d], Init::FanIn(1));
    let w_kvl = b.add("dec.keys".into(), &[d, 3 * d], Init::FanIn(d));
    let w_out = b.add("dec.glimpse.out".into(), &[d, d], Init::FanIn(d));
    let w_dist = b.add("dec.distance".into(), &[1], Init::Const(0.0));
    let lay = Layout {
        wx,
        bx,
        layers,
        lnf_g,
        lnf_b,
        w_ctx,
        v_first,
        v_cur,
        w_kvl,
        w_out,
        w_dist,
    };
    (lay, b.specs)
}

/// The named parameter tensors of a policy network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl PolicyParams {
    /// Fresh parameters drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let feat = crate::features::featurizer_by_name(&config.featurizer)?;
        let (layout, specs) = layout(config, feat.node_dim(config.problem));
        let mut rng = derive_rng(seed, &[0x1417]);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let len: usize = shape.iter().product();
            let data = match init {
                Init::FanIn(f) => {
                    let bound = 1.0 / (f as f64).sqrt();
                    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
                }
                Init::Const(c) => vec![c; len],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(PolicyParams {
            config: config.clone(),
            names,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, which must match the layout
    /// `config` implies exactly.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        if named.len() != p.tensors.len() {
            return Err(PolicyError::Mismatch(format!(
                "expected {} parameter tensors, found {}",
                p.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != p.names[i] || t.shape() != p.tensors[i].shape() {
                return Err(PolicyError::Mismatch(format!(
                    "parameter {}: expected {} {:?}, found {} {:?}",
                    i,
                    p.names[i],
                    p.tensors[i].shape(),
                    name,
                    t.shape()
                )));
            }
            p.tensors[i] = t;
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let p = PolicyParams::init(&ModelConfig::default(), 0).unwrap();
        let qkv = p.get("enc.0.attn.qkv").unwrap();
        assert_eq!(qkv.shape(), &[128, 384]);
        assert_eq!(p.get("enc.2.ff.w1").unwrap().shape(), &[128, 512]);
        assert!(p.get("enc.3.ff.w1").is_none());
        assert_eq!(p.get("enc.0.phi.w2").unwrap().shape(), &[16, 8]);
    }

    #[test]
    fn deterministic_init() {
        let cfg = ModelConfig::tiny(ProblemKind::Cvrp);
        assert_eq!(PolicyParams::init(&cfg, 3).unwrap(), PolicyParams::init(&cfg, 3).unwrap());
        assert_ne!(PolicyParams::init(&cfg, 3).unwrap(), PolicyParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn bad_head_split() {
        let cfg = ModelConfig {
            head_dim: 15,
            ..ModelConfig::default()
        };
        assert!(PolicyParams::init(&cfg, 0).is_err());
    }

    #[test]
    fn from_named_checks_shapes() {
        let cfg = ModelConfig::tiny(ProblemKind::Tsp);
        let p = PolicyParams::init(&cfg, 1).unwrap();
        let named: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        assert_eq!(PolicyParams::from_named(&cfg, named.clone()).unwrap(), p);
        let wider = ModelConfig {
            d_model: 32,
            head_dim: 16,
            ..cfg
        };
        assert!(matches!(
            PolicyParams::from_named(&wider, named),
            Err(PolicyError::Mismatch(_))
        ));
    }
}
