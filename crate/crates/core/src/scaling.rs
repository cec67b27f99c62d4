//! Per-layer multipliers for standard parameterization and μP.
//!
//! The μP rules are stored symbolically as monomials in the effective fan-out
//! and fan-in with half-integer exponents, so they can be compared exactly
//! against a reference table and evaluated numerically from the same source.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{mlp_specs, LayerRole, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ParamScheme {
    Sp,
    #[default]
    MuP,
}

impl FromStr for ParamScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sp" | "standard" => Ok(ParamScheme::Sp),
            "mup" | "μp" => Ok(ParamScheme::MuP),
            other => Err(Error::Config(format!("unknown scheme '{other}' (expected sp or mup)"))),
        }
    }
}

impl fmt::Display for ParamScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamScheme::Sp => "sp",
            ParamScheme::MuP => "mup",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Adopt,
    Lamb,
    Sophia,
    Shampoo,
    Muon,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::AdamW,
        OptimizerKind::Adopt,
        OptimizerKind::Lamb,
        OptimizerKind::Sophia,
        OptimizerKind::Shampoo,
        OptimizerKind::Muon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Adopt => "adopt",
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::Sophia => "sophia",
            OptimizerKind::Shampoo => "shampoo",
            OptimizerKind::Muon => "muon",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == wanted)
            .ok_or_else(|| Error::Config(format!("unknown optimizer '{}'", s.trim())))
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numeric multipliers for one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRule {
    /// Standard deviation of the entries of `W̃`.
    pub init_std: f64,
    /// `σ_l`, so the effective weight is `σ_l W̃`.
    pub weight_mult: f64,
    pub lr_mult: f64,
    pub eps_mult: f64,
    pub wd_mult: f64,
}

impl ScalingRule {
    pub const UNIT: ScalingRule = ScalingRule {
        init_std: 1.0,
        weight_mult: 1.0,
        lr_mult: 1.0,
        eps_mult: 1.0,
        wd_mult: 1.0,
    };
}

/// `n_out^{out_half/2} · n_in^{in_half/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Monomial {
    pub out_half: i32,
    pub in_half: i32,
}

impl Monomial {
    pub const ONE: Monomial = Monomial::new(0, 0);

    pub const fn new(out_half: i32, in_half: i32) -> Self {
        Self { out_half, in_half }
    }

    pub fn mul(self, other: Monomial) -> Monomial {
        Monomial::new(self.out_half + other.out_half, self.in_half + other.in_half)
    }

    /// Drops the exponent of every dimension the role pins to 1.
    pub fn specialize(self, role: LayerRole) -> Monomial {
        match role {
            LayerRole::Input => Monomial::new(self.out_half, 0),
            LayerRole::Output => Monomial::new(0, self.in_half),
            LayerRole::Hidden => self,
        }
    }

    pub fn eval(self, n_out: usize, n_in: usize) -> f64 {
        half_power(n_out, self.out_half) * half_power(n_in, self.in_half)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let factor = |name: &str, half: i32| match half {
            0 => None,
            2 => Some(name.to_string()),
            h if h % 2 == 0 => Some(format!("{name}^{}", h / 2)),
            h => Some(format!("{name}^({h}/2)")),
        };
        let parts: Vec<String> = [factor("n_out", self.out_half), factor("n_in", self.in_half)]
            .into_iter()
            .flatten()
            .collect();
        if parts.is_empty() {
            f.write_str("1")
        } else {
            f.write_str(&parts.join("·"))
        }
    }
}

/// A monomial or the minimum of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingExpr {
    Mono(Monomial),
    Min(Monomial, Monomial),
}

impl ScalingExpr {
    pub fn eval(self, n_out: usize, n_in: usize) -> f64 {
        match self {
            ScalingExpr::Mono(m) => m.eval(n_out, n_in),
            ScalingExpr::Min(a, b) => {
                if first_is_smaller(a, b, n_out, n_in) {
                    a.eval(n_out, n_in)
                } else {
                    b.eval(n_out, n_in)
                }
            }
        }
    }

    /// Reduces to a single monomial for `role`. Hidden layers are resolved
    /// under `n_out ≥ n_in`; `None` when the minimum still depends on the dims.
    pub fn resolve(self, role: LayerRole) -> Option<Monomial> {
        match self {
            ScalingExpr::Mono(m) => Some(m.specialize(role)),
            ScalingExpr::Min(a, b) => {
                let (a, b) = (a.specialize(role), b.specialize(role));
                // b / a = n_out^{x/2} n_in^{y/2}
                let x = b.out_half - a.out_half;
                let y = b.in_half - a.in_half;
                let (b_ge_a, b_le_a) = match role {
                    LayerRole::Input => (x >= 0, x <= 0),
                    LayerRole::Output => (y >= 0, y <= 0),
                    LayerRole::Hidden => (x >= 0 && x + y >= 0, x <= 0 && x + y <= 0),
                };
                if b_ge_a {
                    Some(a)
                } else if b_le_a {
                    Some(b)
                } else {
                    None
                }
            }
        }
    }
}

impl fmt::Display for ScalingExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingExpr::Mono(m) => write!(f, "{m}"),
            ScalingExpr::Min(a, b) => write!(f, "min({a}, {b})"),
        }
    }
}

/// μP rule for one optimizer and layer role, before substituting dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SymbolicRule {
    pub init_std: ScalingExpr,
    pub weight_mult: ScalingExpr,
    /// `None` where the optimizer defines no rule for the role.
    pub lr_mult: Option<ScalingExpr>,
    pub eps_mult: ScalingExpr,
    pub wd_mult: ScalingExpr,
}

const fn mono(out_half: i32, in_half: i32) -> ScalingExpr {
    ScalingExpr::Mono(Monomial::new(out_half, in_half))
}

pub fn symbolic_rule(kind: OptimizerKind, role: LayerRole) -> SymbolicRule {
    let lr_mult = match kind {
        OptimizerKind::AdamW | OptimizerKind::Adopt | OptimizerKind::Sophia => Some(mono(0, -2)),
        OptimizerKind::Lamb => Some(mono(0, 0)),
        OptimizerKind::Shampoo => Some(mono(1, -1)),
        OptimizerKind::Muon if role == LayerRole::Hidden => Some(mono(0, 0)),
        OptimizerKind::Muon => None,
    };
    SymbolicRule {
        init_std: mono(0, 0),
        // (1/√n_in)·min{1, √(n_out/n_in)}
        weight_mult: ScalingExpr::Min(Monomial::new(0, -1), Monomial::new(1, -2)),
        lr_mult,
        eps_mult: mono(-2, 0),
        wd_mult: mono(0, 2),
    }
}

/// Fan dimensions with every non-width-scaled side replaced by 1, as
/// `(n_out_eff, n_in_eff)`.
pub fn effective_dims(layer: &LayerSpec) -> (usize, usize) {
    let n_out = if layer.width_scaled_out { layer.fan_out } else { 1 };
    let n_in = if layer.width_scaled_in { layer.fan_in } else { 1 };
    (n_out, n_in)
}

pub fn derive_rule(kind: OptimizerKind, layer: &LayerSpec, scheme: ParamScheme) -> ScalingRule {
    match scheme {
        ParamScheme::Sp => ScalingRule {
            init_std: 1.0 / (layer.fan_in as f64).sqrt(),
            ..ScalingRule::UNIT
        },
        ParamScheme::MuP => {
            let sym = symbolic_rule(kind, layer.role);
            let Some(lr) = sym.lr_mult else {
                // Muon only covers hidden layers; the rest of the model runs AdamW.
                return derive_rule(OptimizerKind::AdamW, layer, scheme);
            };
            let (n_out, n_in) = effective_dims(layer);
            ScalingRule {
                init_std: sym.init_std.eval(n_out, n_in),
                weight_mult: sym.weight_mult.eval(n_out, n_in),
                lr_mult: lr.eval(n_out, n_in),
                eps_mult: sym.eps_mult.eval(n_out, n_in),
                wd_mult: sym.wd_mult.eval(n_out, n_in),
            }
        }
    }
}

pub fn derive_rules(kind: OptimizerKind, specs: &[LayerSpec], scheme: ParamScheme) -> Vec<ScalingRule> {
    specs.iter().map(|s| derive_rule(kind, s, scheme)).collect()
}

/// Tab-separated dump of the rules for an MLP at each width.
pub fn rule_table(
    kind: OptimizerKind,
    scheme: ParamScheme,
    widths: &[usize],
    depth: usize,
    input_dim: usize,
    output_dim: usize,
) -> Result<String> {
    if widths.is_empty() {
        return Err(Error::Config("at least one width is required".into()));
    }
    let mut out = String::from(
        "width\tlayer\trole\tfan_in\tfan_out\tinit_std\tweight_mult\tlr_mult\teps_mult\twd_mult\n",
    );
    for &width in widths {
        let specs = mlp_specs(input_dim, width, depth, output_dim)?;
        for (l, spec) in specs.iter().enumerate() {
            let r = derive_rule(kind, spec, scheme);
            out.push_str(&format!(
                "{width}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                l + 1,
                spec.role,
                spec.fan_in,
                spec.fan_out,
                r.init_std,
                r.weight_mult,
                r.lr_mult,
                r.eps_mult,
                r.wd_mult
            ));
        }
    }
    Ok(out)
}

fn half_power(n: usize, half: i32) -> f64 {
    let n = n as f64;
    let whole = n.powi(half.abs() / 2);
    let value = if half % 2 != 0 { whole * n.sqrt() } else { whole };
    if half < 0 {
        1.0 / value
    } else {
        value
    }
}

/// Decides `a ≤ b` exactly by comparing squared integer magnitudes.
fn first_is_smaller(a: Monomial, b: Monomial, n_out: usize, n_in: usize) -> bool {
    // a ≤ b  ⇔  n_out^{x} n_in^{y} ≥ 1 with (x, y) the half-exponents of b/a,
    // ⇔  n_out^{x⁺} n_in^{y⁺} ≥ n_out^{x⁻} n_in^{y⁻} after squaring.
    let x = b.out_half - a.out_half;
    let y = b.in_half - a.in_half;
    let lhs = int_pow(n_out, x.max(0)).zip(int_pow(n_in, y.max(0))).and_then(|(p, q)| p.checked_mul(q));
    let rhs = int_pow(n_out, (-x).max(0))
        .zip(int_pow(n_in, (-y).max(0)))
        .and_then(|(p, q)| p.checked_mul(q));
    match (lhs, rhs) {
        (Some(l), Some(r)) => l >= r,
        _ => a.eval(n_out, n_in) <= b.eval(n_out, n_in),
    }
}

fn int_pow(n: usize, e: i32) -> Option<u128> {
    (n as u128).checked_pow(e as u32)
}
