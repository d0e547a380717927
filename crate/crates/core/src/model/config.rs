use std::fmt;
use std::str::FromStr;

use crate::kv::KvMap;
use crate::numcore::LrSchedule;

use super::ModelError;

/// Inclusive parameter-count band of the full-width network.
pub const PARAM_BUDGET: (usize, usize) = (612_500, 637_500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Plif,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerChoice {
    StepLr,
    Cosine,
}

impl SchedulerChoice {
    pub fn schedule(self) -> LrSchedule {
        match self {
            SchedulerChoice::StepLr => LrSchedule::default_step_lr(),
            SchedulerChoice::Cosine => LrSchedule::default_cosine(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

impl fmt::Display for ConvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}k{}s{}p{}", self.out_channels, self.kernel, self.stride, self.padding)
    }
}

impl FromStr for ConvSpec {
    type Err = String;

    /// `64k3s2p1`
    fn from_str(s: &str) -> Result<Self, String> {
        let err = || format!("invalid conv spec `{s}`, expected e.g. 64k3s2p1");
        let (c, rest) = s.split_once('k').ok_or_else(err)?;
        let (k, rest) = rest.split_once('s').ok_or_else(err)?;
        let (st, p) = rest.split_once('p').ok_or_else(err)?;
        let n = |v: &str| v.trim().parse::<usize>().map_err(|_| err());
        Ok(Self::new(n(c)?, n(k)?, n(st)?, n(p)?))
    }
}

/// Widths and strides of the fixed topology: a patchify stem, four shared
/// blocks, then two identical three-block paths each closed by an output
/// block producing three values per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelPlan {
    pub input_channels: usize,
    pub stem: ConvSpec,
    pub shared: [ConvSpec; 4],
    pub path: [ConvSpec; 3],
    pub head: ConvSpec,
}

impl ChannelPlan {
    pub const fn reference() -> Self {
        Self {
            input_channels: 2,
            stem: ConvSpec::new(32, 4, 4, 0),
            shared: [
                ConvSpec::new(64, 3, 2, 1),
                ConvSpec::new(64, 3, 2, 1),
                ConvSpec::new(128, 3, 2, 1),
                ConvSpec::new(128, 3, 2, 1),
            ],
            path: [
                ConvSpec::new(64, 3, 2, 1),
                ConvSpec::new(64, 3, 2, 1),
                ConvSpec::new(96, 3, 2, 1),
            ],
            head: ConvSpec::new(3, 3, 1, 1),
        }
    }

    /// Every hidden width divided by `divisor` (rounded up).
    pub fn reduced(divisor: usize) -> Self {
        let d = divisor.max(1);
        let shrink = |s: ConvSpec| ConvSpec {
            out_channels: s.out_channels.div_ceil(d),
            ..s
        };
        let r = Self::reference();
        Self {
            stem: shrink(r.stem),
            shared: r.shared.map(shrink),
            path: r.path.map(shrink),
            ..r
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = std::iter::once(&self.stem)
            .chain(&self.shared)
            .chain(&self.path)
            .chain(std::iter::once(&self.head));
        for s in all {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(ModelError::InvalidConfig(format!("degenerate block {s}")));
            }
        }
        if self.input_channels == 0 {
            return Err(ModelError::InvalidConfig("no input channels".into()));
        }
        if self.head.out_channels != 3 {
            return Err(ModelError::InvalidConfig(format!(
                "output blocks must produce 3 channels, plan has {}",
                self.head.out_channels
            )));
        }
        Ok(())
    }
}

/// One of the eight activation x batchnorm x scheduler combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct S2E2Config {
    pub activation: Activation,
    pub use_bn: bool,
    pub scheduler: SchedulerChoice,
    pub plan: ChannelPlan,
    /// Inclusive band enforced by `build`; `None` for reduced-width models.
    pub param_budget: Option<(usize, usize)>,
}

/// The six compared variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ReluNoBn,
    PlifStepNoBn,
    PlifCosNoBn,
    ReluBn,
    PlifStepBn,
    PlifCosBn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::ReluNoBn,
        Variant::PlifStepNoBn,
        Variant::PlifCosNoBn,
        Variant::ReluBn,
        Variant::PlifStepBn,
        Variant::PlifCosBn,
    ];

    pub fn config(self) -> S2E2Config {
        let (activation, use_bn, scheduler) = match self {
            Variant::ReluNoBn => (Activation::Relu, false, SchedulerChoice::StepLr),
            Variant::PlifStepNoBn => (Activation::Plif, false, SchedulerChoice::StepLr),
            Variant::PlifCosNoBn => (Activation::Plif, false, SchedulerChoice::Cosine),
            Variant::ReluBn => (Activation::Relu, true, SchedulerChoice::StepLr),
            Variant::PlifStepBn => (Activation::Plif, true, SchedulerChoice::StepLr),
            Variant::PlifCosBn => (Activation::Plif, true, SchedulerChoice::Cosine),
        };
        S2E2Config {
            activation,
            use_bn,
            scheduler,
            plan: ChannelPlan::reference(),
            param_budget: Some(PARAM_BUDGET),
        }
    }
}

impl S2E2Config {
    pub fn preset(variant: Variant) -> Self {
        variant.config()
    }

    /// Same variant at reduced width, without the parameter budget.
    pub fn reduced(mut self, divisor: usize) -> Self {
        self.plan = ChannelPlan::reduced(divisor);
        self.param_budget = None;
        self
    }

    pub fn is_spiking(&self) -> bool {
        self.activation == Activation::Plif
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| {
            let c = v.config();
            (c.activation, c.use_bn, c.scheduler) == (self.activation, self.use_bn, self.scheduler)
        })
    }

    /// Row label in the style of the comparison table, e.g. `PLIF Coslr W BN`.
    pub fn label(&self) -> String {
        let act = match self.activation {
            Activation::Relu => "Relu",
            Activation::Plif => "PLIF",
        };
        let sched = match (self.activation, self.scheduler) {
            (Activation::Relu, SchedulerChoice::StepLr) => "",
            (_, SchedulerChoice::StepLr) => " Steplr",
            (_, SchedulerChoice::Cosine) => " Coslr",
        };
        let bn = if self.use_bn { "W BN" } else { "W/O BN" };
        format!("{act}{sched} {bn}")
    }

    /// `relu-bn-step`, `plif-nobn-cos`, ...
    pub fn slug(&self) -> String {
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Plif => "plif",
        };
        let bn = if self.use_bn { "bn" } else { "nobn" };
        let sched = match self.scheduler {
            SchedulerChoice::StepLr => "step",
            SchedulerChoice::Cosine => "cos",
        };
        format!("{act}-{bn}-{sched}")
    }

    /// Parses a slug whose three parts are separated by `-`, `_`, `x`, `,`
    /// or `+`, in any order.
    pub fn from_slug(slug: &str) -> Result<Self, ModelError> {
        let err = || {
            ModelError::InvalidConfig(format!(
                "unknown variant `{slug}`, expected {{relu,plif}}-{{bn,nobn}}-{{step,cos}}"
            ))
        };
        let lower = slug.to_ascii_lowercase();
        let parts: Vec<&str> = lower
            .split(['-', '_', ',', '+'])
            .flat_map(|p| split_x(p))
            .filter(|p| !p.is_empty())
            .collect();
        let (mut act, mut bn, mut sched) = (None, None, None);
        for p in parts {
            match p {
                "relu" => act = Some(Activation::Relu),
                "plif" => act = Some(Activation::Plif),
                "bn" => bn = Some(true),
                "nobn" => bn = Some(false),
                "step" | "steplr" => sched = Some(SchedulerChoice::StepLr),
                "cos" | "cosine" | "coslr" => sched = Some(SchedulerChoice::Cosine),
                _ => return Err(err()),
            }
        }
        Ok(S2E2Config {
            activation: act.ok_or_else(err)?,
            use_bn: bn.ok_or_else(err)?,
            scheduler: sched.ok_or_else(err)?,
            plan: ChannelPlan::reference(),
            param_budget: Some(PARAM_BUDGET),
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("variant", self.slug());
        kv.set("input_channels", self.plan.input_channels);
        kv.set("stem", self.plan.stem);
        kv.set("shared", join(&self.plan.shared));
        kv.set("path", join(&self.plan.path));
        kv.set("head", self.plan.head);
        kv.set(
            "param_budget",
            match self.param_budget {
                Some((lo, hi)) => format!("{lo}..{hi}"),
                None => "none".into(),
            },
        );
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, ModelError> {
        let mut cfg = Self::from_slug(&kv.require::<String>("variant")?)?;
        let spec = |key: &str| -> Result<ConvSpec, ModelError> {
            kv.require::<String>(key)?
                .parse()
                .map_err(ModelError::InvalidConfig)
        };
        let list = |key: &str| -> Result<Vec<ConvSpec>, ModelError> {
            kv.require::<String>(key)?
                .split(',')
                .map(|s| s.trim().parse().map_err(ModelError::InvalidConfig))
                .collect()
        };
        let shared = list("shared")?;
        let path = list("path")?;
        cfg.plan = ChannelPlan {
            input_channels: kv.require("input_channels")?,
            stem: spec("stem")?,
            shared: shared
                .try_into()
                .map_err(|_| ModelError::InvalidConfig("`shared` needs 4 blocks".into()))?,
            path: path
                .try_into()
                .map_err(|_| ModelError::InvalidConfig("`path` needs 3 blocks".into()))?,
            head: spec("head")?,
        };
        let budget = kv.require::<String>("param_budget")?;
        cfg.param_budget = if budget == "none" {
            None
        } else {
            let (lo, hi) = budget
                .split_once("..")
                .ok_or_else(|| ModelError::InvalidConfig(format!("param_budget `{budget}`")))?;
            let n = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| ModelError::InvalidConfig(format!("param_budget `{budget}`")))
            };
            Some((n(lo)?, n(hi)?))
        };
        cfg.plan.validate()?;
        Ok(cfg)
    }
}

/// Splits `reluxbnxstep` style strings on `x` without breaking words.
fn split_x(part: &str) -> Vec<&str> {
    const WORDS: [&str; 9] = ["relu", "plif", "nobn", "bn", "steplr", "step", "coslr", "cosine", "cos"];
    if WORDS.contains(&part) {
        return vec![part];
    }
    let mut out = Vec::new();
    let mut rest = part;
    while !rest.is_empty() {
        let Some(w) = WORDS.iter().find(|w| rest.starts_with(**w)) else {
            return vec![part];
        };
        out.push(&rest[..w.len()]);
        rest = &rest[w.len()..];
        if let Some(r) = rest.strip_prefix('x') {
            rest = r;
        }
    }
    out
}

fn join(specs: &[ConvSpec]) -> String {
    specs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
