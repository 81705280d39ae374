//! Policy classes, their closed loops with a plant and checkpoints.

mod baseline;
mod generic;
mod youla;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{BaselineArch, LstmPolicy, MlpPolicy};
pub use generic::{
    check_conditions, simulate_c_loop, simulate_q_loop, CLoop, ConditionReport, ConditionResult, GenericCController,
    GenericQPolicy, Map1, Map2, Map3, QLoop, FD_STEP,
};
pub use youla::{build_diagonals, Diagonals, YoulaArch, YoulaLruPolicy, YoulaRates};

use crate::autodiff::{Eval, Graph, ParamLayout};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ode::Dynamics;
use crate::plant::{InputAffinePlant, QuadraticCost, StageCost};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Youla,
    ResidualMlp,
    PureMlp,
    ResidualLstm,
    PureLstm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Youla, PolicyKind::ResidualMlp, PolicyKind::PureMlp, PolicyKind::ResidualLstm, PolicyKind::PureLstm];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Youla => "youla",
            PolicyKind::ResidualMlp => "residual_mlp",
            PolicyKind::PureMlp => "pure_mlp",
            PolicyKind::ResidualLstm => "residual_lstm",
            PolicyKind::PureLstm => "pure_lstm",
        }
    }

    /// Whether the class carries the structural stability guarantee.
    pub fn is_structural(self) -> bool {
        self == PolicyKind::Youla
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy kind `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyArch {
    pub youla: YoulaArch,
    pub baseline: BaselineArch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Youla(YoulaLruPolicy),
    Mlp(MlpPolicy),
    Lstm(LstmPolicy),
}

impl Policy {
    pub fn build(kind: PolicyKind, k: Mat, arch: &PolicyArch) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Youla => Policy::Youla(YoulaLruPolicy::new(k, &arch.youla)?),
            PolicyKind::ResidualMlp => Policy::Mlp(MlpPolicy::new(k, true, &arch.baseline)?),
            PolicyKind::PureMlp => Policy::Mlp(MlpPolicy::new(k, false, &arch.baseline)?),
            PolicyKind::ResidualLstm => Policy::Lstm(LstmPolicy::new(k, true, &arch.baseline)?),
            PolicyKind::PureLstm => Policy::Lstm(LstmPolicy::new(k, false, &arch.baseline)?),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Youla(_) => PolicyKind::Youla,
            Policy::Mlp(p) if p.residual => PolicyKind::ResidualMlp,
            Policy::Mlp(_) => PolicyKind::PureMlp,
            Policy::Lstm(p) if p.residual => PolicyKind::ResidualLstm,
            Policy::Lstm(_) => PolicyKind::PureLstm,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        match self {
            Policy::Youla(p) => &p.layout,
            Policy::Mlp(p) => &p.layout,
            Policy::Lstm(p) => &p.layout,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }

    pub fn gain(&self) -> &Mat {
        match self {
            Policy::Youla(p) => &p.k,
            Policy::Mlp(p) => &p.k,
            Policy::Lstm(p) => &p.k,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.gain().cols()
    }

    pub fn input_dim(&self) -> usize {
        self.gain().rows()
    }

    /// Controller states integrated alongside the plant. The LSTM hidden
    /// state advances per step and is not part of the integrated state.
    pub fn controller_dim(&self) -> usize {
        match self {
            Policy::Youla(p) => p.controller_dim(),
            _ => 0,
        }
    }

    /// Position of the running cost in the closed-loop state.
    pub fn cost_index(&self) -> usize {
        self.state_dim() + self.controller_dim()
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Policy::Youla(p) => p.init_params(rng),
            Policy::Mlp(p) => p.init_params(rng),
            Policy::Lstm(p) => p.init_params(rng),
        }
    }

    /// `(x0, controller state, 0)`.
    pub fn initial_state<G: Graph>(&self, g: &mut G, x0: &[f64]) -> Result<G::V> {
        if x0.len() != self.state_dim() {
            return Err(Error::Dim { op: "initial_state", detail: format!("x0 has {} entries", x0.len()) });
        }
        let x = g.constant(x0);
        let j = g.zeros(1);
        Ok(match self {
            Policy::Youla(p) => {
                let (xhat, q_re, q_im) = p.init_state(g, &x)?;
                g.concat(&[&x, &xhat, &q_re, &q_im, &j])
            }
            _ => g.concat(&[&x, &j]),
        })
    }

    /// Closed-loop field without the cost accumulator, at plain values.
    /// Recurrent baselines are rejected since their cell state lives outside
    /// the integrated state.
    pub fn augmented_field<P: InputAffinePlant>(&self, params: &[f64], plant: &P, z: &[f64]) -> Result<Vec<f64>> {
        if matches!(self, Policy::Lstm(_)) {
            return Err(Error::Precondition("recurrent policies have no static augmented field".into()));
        }
        let dim = self.cost_index();
        if z.len() != dim {
            return Err(Error::Dim { op: "augmented_field", detail: format!("z has {} entries, expected {dim}", z.len()) });
        }
        let cost = QuadraticCost { gamma1: 0.0 };
        let mut cl = ClosedLoop::new(self, plant, &cost);
        let mut g = Eval::new(params);
        let mut full = z.to_vec();
        full.push(0.0);
        let zv = g.constant(&full);
        let mut out = cl.field(&mut g, &zv)?;
        out.truncate(dim);
        Ok(out)
    }

    /// Condition-check view of a Youla policy at fixed parameters.
    pub fn as_generic<'a, P: InputAffinePlant>(&'a self, params: &'a [f64], plant: &'a P) -> Result<GenericQPolicy<'a>> {
        let Policy::Youla(p) = self else {
            return Err(Error::Precondition(format!("{} is not a Youla policy", self.kind())));
        };
        let _ = plant;
        let n_q = p.n_q;
        let s_diag: Vec<f64> = p.diagonals(params).lambda_xhat;
        Ok(GenericQPolicy {
            n: p.n,
            n_q: 2 * n_q,
            m: p.m,
            k: p.k.clone(),
            s: Box::new(move |z| z.iter().zip(&s_diag).map(|(v, l)| l * v).collect()),
            f_q: Box::new(move |q, xhat, x| {
                let mut g = Eval::new(params);
                let (qr, qi) = (g.constant(&q[..n_q]), g.constant(&q[n_q..]));
                let (xv, xh) = (g.constant(x), g.constant(xhat));
                let e = g.sub(&xv, &xh);
                let (a, b) = p.q_rates(&mut g, &qr, &qi, &e);
                [a, b].concat()
            }),
            h_q: Box::new(move |q, xhat, x| {
                let mut g = Eval::new(params);
                let qr = g.constant(&q[..n_q]);
                let e: Vec<f64> = x.iter().zip(xhat).map(|(a, b)| a - b).collect();
                let ev = g.constant(&e);
                let inp = g.concat(&[&qr, &ev]);
                p.phi3.forward(&mut g, &inp).expect("readout dims")
            }),
        })
    }

    pub fn checkpoint(&self, params: &[f64], arch: &PolicyArch) -> Result<Checkpoint> {
        if params.len() != self.num_params() {
            return Err(Error::Dim { op: "checkpoint", detail: format!("{} params for {}", params.len(), self.num_params()) });
        }
        let named = self.layout().entries().iter().map(|(name, s)| (name.clone(), params[s.range()].to_vec())).collect();
        Ok(Checkpoint {
            kind: self.kind(),
            dims: CheckpointDims {
                n: self.state_dim(),
                m: self.input_dim(),
                controller_dim: self.controller_dim(),
                num_params: self.num_params(),
            },
            arch: arch.clone(),
            k: self.gain().to_rows(),
            params: named,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDims {
    pub n: usize,
    pub m: usize,
    pub controller_dim: usize,
    pub num_params: usize,
}

/// Serialized policy: kind, dimensions, architecture, gain and one flat
/// array per named parameter slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: PolicyKind,
    pub dims: CheckpointDims,
    pub arch: PolicyArch,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn restore(&self) -> Result<(Policy, Vec<f64>)> {
        let k = Mat::from_rows(&self.k)?;
        let policy = Policy::build(self.kind, k, &self.arch)?;
        if policy.num_params() != self.dims.num_params || policy.state_dim() != self.dims.n {
            return Err(Error::InvalidArgument("checkpoint dims do not match its architecture".into()));
        }
        let mut params = vec![0.0; policy.num_params()];
        for (name, s) in policy.layout().entries() {
            let v = self.params.get(name).ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks `{name}`")))?;
            if v.len() != s.len {
                return Err(Error::InvalidArgument(format!("`{name}` has {} values, expected {}", v.len(), s.len)));
            }
            params[s.range()].copy_from_slice(v);
        }
        if self.params.len() != policy.layout().entries().len() {
            return Err(Error::InvalidArgument("checkpoint has unknown parameter slices".into()));
        }
        Ok((policy, params))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Plant, policy and running cost as one autonomous field over
/// `z = (x, controller state, J)`.
pub struct ClosedLoop<'a, P, C, G: Graph> {
    pub policy: &'a Policy,
    pub plant: &'a P,
    pub cost: &'a C,
    /// LSTM `(h, c)` after the latest step start.
    cell: Option<(G::V, G::V)>,
    held: Option<G::V>,
}

impl<'a, P: InputAffinePlant, C: StageCost, G: Graph> ClosedLoop<'a, P, C, G> {
    pub fn new(policy: &'a Policy, plant: &'a P, cost: &'a C) -> Self {
        Self { policy, plant, cost, cell: None, held: None }
    }

    fn held(&self) -> Result<&G::V> {
        self.held.as_ref().ok_or_else(|| Error::Precondition("recurrent policy used before its first step".into()))
    }

    fn control(&self, g: &mut G, z: &G::V) -> Result<G::V> {
        let n = self.policy.state_dim();
        let x = g.slice(z, 0, n);
        match self.policy {
            Policy::Youla(p) => {
                let xhat = g.slice(z, n, n);
                let q_re = g.slice(z, 2 * n, p.n_q);
                p.control(g, &x, &xhat, &q_re)
            }
            Policy::Mlp(p) => p.control(g, &x),
            Policy::Lstm(p) => {
                let held = self.held()?.clone();
                Ok(p.control(g, &x, &held))
            }
        }
    }
}

impl<P: InputAffinePlant, C: StageCost, G: Graph> Dynamics<G> for ClosedLoop<'_, P, C, G> {
    fn begin_step(&mut self, g: &mut G, z: &G::V) -> Result<()> {
        if let Policy::Lstm(p) = self.policy {
            let x = g.slice(z, 0, p.n);
            let (h, c) = match self.cell.take() {
                Some(hc) => hc,
                None => (g.zeros(p.hidden), g.zeros(p.hidden)),
            };
            let (h, c) = p.cell(g, &x, &h, &c);
            self.held = Some(p.readout(g, &h));
            self.cell = Some((h, c));
        }
        Ok(())
    }

    fn field(&mut self, g: &mut G, z: &G::V) -> Result<G::V> {
        let n = self.policy.state_dim();
        let x = g.slice(z, 0, n);
        let l = self.cost.eval(g, &x);
        match self.policy {
            Policy::Youla(p) => {
                let xhat = g.slice(z, n, n);
                let q_re = g.slice(z, 2 * n, p.n_q);
                let q_im = g.slice(z, 2 * n + p.n_q, p.n_q);
                let r = p.rates(g, self.plant, &x, &xhat, &q_re, &q_im)?;
                Ok(g.concat(&[&r.dx, &r.dxhat, &r.dq_re, &r.dq_im, &l]))
            }
            _ => {
                let u = self.control(g, z)?;
                let dx = self.plant.rate(g, &x, &u);
                Ok(g.concat(&[&dx, &l]))
            }
        }
    }

    fn input(&mut self, g: &mut G, z: &G::V) -> Result<Vec<f64>> {
        let u = self.control(g, z)?;
        Ok(g.value(&u).to_vec())
    }
}
