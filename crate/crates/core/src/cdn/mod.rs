//! Cumulative distribution network inference for binary items.
//!
//! Conditional on the latent factors, the joint CDF of the observed items is
//! a product of Frank copula factors, one per bi-directed edge, with each
//! item's univariate CDF raised to `1/h(i)` inside every factor it joins.
//! Marginalizing an item sets its CDF argument to `+inf`.
//!
//! Probabilities come from the CDF by inclusion-exclusion over binary flip
//! variables. The alternating sum factorizes along the bi-directed graph,
//! so it is evaluated by variable elimination on each connected component.

mod elimination;

use rand::Rng;

use crate::copula::{self, CdfArg, FrankKernel};
use crate::model::{Edge, MixedGraph, ModelParams};
use crate::{Error, Result};

use elimination::{sum_product, Factor};

/// Largest bi-directed component handled by exact elimination.
pub const MAX_COMPONENT: usize = 25;

/// Largest component for which full probability tables are materialized.
pub const MAX_TABLE_COMPONENT: usize = 16;

/// Raw inclusion-exclusion values below this are treated as bugs, not roundoff.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

fn theta_of(params: &ModelParams, e: Edge) -> Result<f64> {
    params
        .theta(e)
        .ok_or_else(|| Error::Domain(format!("no copula parameter for edge {e}")))
}

/// `P(Y_i = 0 | x)` for every observed variable, given one latent value per group.
pub fn prob_zero_all(g: &MixedGraph, params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let part = g.partition();
    (0..g.n_vars())
        .map(|i| copula::prob_zero(x[part.group_of(i)], params.slopes[i], params.intercepts[i]))
        .collect()
}

/// Conditional joint CDF `F(y | x)`. `y` has one entry per observed
/// variable; `CdfArg::Infinity` marginalizes the variable out.
pub fn conditional_cdf(g: &MixedGraph, params: &ModelParams, x: &[f64], y: &[CdfArg]) -> Result<f64> {
    let p = g.n_vars();
    if y.len() != p {
        return Err(Error::Domain(format!("expected {p} CDF arguments, got {}", y.len())));
    }
    if x.len() != g.partition().n_groups() {
        return Err(Error::Domain("latent vector has the wrong length".into()));
    }
    let part = g.partition();
    let u: Vec<f64> = (0..p)
        .map(|i| copula::probit_cond_cdf(y[i], x[part.group_of(i)], params.slopes[i], params.intercepts[i]))
        .collect();
    let retained = |i: usize| y[i] != CdfArg::Infinity;
    let mut r = vec![0usize; p];
    let mut value = 1.0;
    for &e in g.edges() {
        let (a, b) = (e.lo(), e.hi());
        if retained(a) && retained(b) {
            r[a] += 1;
            r[b] += 1;
            let ua = u[a].powf(1.0 / g.h(a) as f64);
            let ub = u[b].powf(1.0 / g.h(b) as f64);
            value *= copula::frank_cdf(ua, ub, theta_of(params, e)?)?;
        }
    }
    for i in (0..p).filter(|&i| retained(i)) {
        value *= u[i].powf(1.0 - r[i] as f64 / g.h(i) as f64);
    }
    Ok(value)
}

fn check_negative(raw: f64) -> Result<f64> {
    if raw < -NEGATIVE_TOLERANCE || raw.is_nan() {
        return Err(Error::NegativeProbability { value: raw });
    }
    Ok(raw.max(0.0))
}

fn check_assignment(g: &MixedGraph, vars: &[usize], values: &[u8]) -> Result<()> {
    if vars.is_empty() {
        return Err(Error::Domain("pmf needs at least one variable".into()));
    }
    if vars.len() != values.len() {
        return Err(Error::Domain("variables and values differ in length".into()));
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= g.n_vars()) {
        return Err(Error::UnknownVariable(format!("index {v}")));
    }
    if values.iter().any(|&v| v > 1) {
        return Err(Error::Domain("pmf values must be binary".into()));
    }
    Ok(())
}

/// `P(Y_V = y | x)` for the variables `vars` taking `values`, with all other
/// variables marginalized.
pub fn pmf(g: &MixedGraph, params: &ModelParams, x: &[f64], vars: &[usize], values: &[u8]) -> Result<f64> {
    check_assignment(g, vars, values)?;
    let u0 = prob_zero_all(g, params, x);
    pmf_with_u0(g, params, &u0, vars, values)
}

/// [`pmf`] with precomputed `P(Y_i = 0 | x)` for every variable.
pub(crate) fn pmf_with_u0(
    g: &MixedGraph,
    params: &ModelParams,
    u0: &[f64],
    vars: &[usize],
    values: &[u8],
) -> Result<f64> {
    let mut value_of = vec![u8::MAX; g.n_vars()];
    for (&v, &y) in vars.iter().zip(values) {
        value_of[v] = y;
    }
    let mut total = 1.0;
    for comp in g.bidirected_components(vars) {
        if comp.len() > MAX_COMPONENT {
            return Err(Error::Capacity(format!(
                "bi-directed component of {} variables exceeds the limit of {MAX_COMPONENT}",
                comp.len()
            )));
        }
        total *= component_pmf(g, params, u0, &comp, &value_of)?;
        if total == 0.0 {
            break;
        }
    }
    Ok(total)
}

/// Inclusion-exclusion over one connected component, as a sum-product over
/// flip variables `z_i`. Items observed at 0 cannot flip (their CDF argument
/// would drop below the support and zero every term), so only items at 1
/// carry a free flip variable.
fn component_pmf(g: &MixedGraph, params: &ModelParams, u0: &[f64], comp: &[usize], value_of: &[u8]) -> Result<f64> {
    if comp.len() == 1 {
        let i = comp[0];
        return Ok(if value_of[i] == 0 { u0[i] } else { 1.0 - u0[i] });
    }
    let in_comp = |v: usize| comp.binary_search(&v).is_ok();
    let mut r = vec![0usize; comp.len()];
    let mut edges = Vec::new();
    for &e in g.edges() {
        if in_comp(e.lo()) && in_comp(e.hi()) {
            let a = comp.binary_search(&e.lo()).unwrap();
            let b = comp.binary_search(&e.hi()).unwrap();
            r[a] += 1;
            r[b] += 1;
            edges.push((a, b, e));
        }
    }
    // CDF argument of local variable k under flip z: value(y - z).
    let arg = |k: usize, z: u8| -> f64 {
        let i = comp[k];
        match (value_of[i], z) {
            (1, 0) => 1.0,
            (1, 1) | (0, 0) => u0[i],
            _ => 0.0,
        }
    };
    let free = |k: usize| value_of[comp[k]] == 1;
    let inv_h: Vec<f64> = comp.iter().map(|&i| 1.0 / g.h(i) as f64).collect();

    let mut factors = Vec::with_capacity(comp.len() + edges.len());
    for k in 0..comp.len() {
        let expo = 1.0 - r[k] as f64 * inv_h[k];
        if free(k) {
            factors.push(Factor::unary(k, arg(k, 0).powf(expo), -arg(k, 1).powf(expo)));
        } else {
            factors.push(Factor::constant(arg(k, 0).powf(expo)));
        }
    }
    for &(a, b, e) in &edges {
        let kern = FrankKernel::new(theta_of(params, e)?);
        let c = |za: u8, zb: u8| {
            let ua = arg(a, za).powf(inv_h[a]);
            let ub = arg(b, zb).powf(inv_h[b]);
            kern.eval(ua, kern.pre(ua), ub, kern.pre(ub))
        };
        factors.push(match (free(a), free(b)) {
            (true, true) => Factor::pairwise(a, b, [c(0, 0), c(1, 0), c(0, 1), c(1, 1)]),
            (true, false) => Factor::unary(a, c(0, 0), c(1, 0)),
            (false, true) => Factor::unary(b, c(0, 0), c(0, 1)),
            (false, false) => Factor::constant(c(0, 0)),
        });
    }
    check_negative(sum_product(factors))
}

/// Joint 2x2 table `P(Y_i = a, Y_j = b | x_i, x_j)` indexed `[a][b]`, where
/// `x_i`, `x_j` are the latent values of the groups of `i` and `j`.
pub fn bivariate_pmf(
    i: usize,
    j: usize,
    g: &MixedGraph,
    params: &ModelParams,
    x_i: f64,
    x_j: f64,
) -> Result<[[f64; 2]; 2]> {
    if i == j {
        return Err(Error::Domain("bivariate pmf needs two distinct variables".into()));
    }
    let ui = copula::prob_zero(x_i, params.slopes[i], params.intercepts[i]);
    let uj = copula::prob_zero(x_j, params.slopes[j], params.intercepts[j]);
    let f00 = if g.has_edge(i, j) {
        let theta = theta_of(params, Edge::new(i, j)?)?;
        let (hi, hj) = (g.h(i) as f64, g.h(j) as f64);
        let ai = ui.powf(1.0 / hi);
        let aj = uj.powf(1.0 / hj);
        let kern = FrankKernel::new(theta);
        kern.eval(ai, kern.pre(ai), aj, kern.pre(aj)) * ui.powf(1.0 - 1.0 / hi) * uj.powf(1.0 - 1.0 / hj)
    } else {
        ui * uj
    };
    Ok(cells_from_f00(ui, uj, f00))
}

/// Rectangle rule on the bivariate CDF; cells are clamped at zero.
#[inline]
pub(crate) fn cells_from_f00(ui: f64, uj: f64, f00: f64) -> [[f64; 2]; 2] {
    [
        [f00.max(0.0), (ui - f00).max(0.0)],
        [(uj - f00).max(0.0), (1.0 - ui - uj + f00).max(0.0)],
    ]
}

/// Exact draw of all observed variables given the latent vector `x`.
pub fn sample_config<R: Rng + ?Sized>(
    g: &MixedGraph,
    params: &ModelParams,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<u8>> {
    let p = g.n_vars();
    let u0 = prob_zero_all(g, params, x);
    let all: Vec<usize> = (0..p).collect();
    let mut y = vec![0u8; p];
    for comp in g.bidirected_components(&all) {
        if comp.len() > MAX_COMPONENT {
            return Err(Error::Capacity(format!(
                "bi-directed component of {} variables exceeds the limit of {MAX_COMPONENT}",
                comp.len()
            )));
        }
        if comp.len() == 1 {
            let i = comp[0];
            y[i] = u8::from(rng.gen::<f64>() >= u0[i]);
            continue;
        }
        let mut vars = Vec::with_capacity(comp.len());
        let mut vals = Vec::with_capacity(comp.len());
        let mut p_prefix = 1.0;
        for &k in &comp {
            vars.push(k);
            vals.push(0);
            let p0 = pmf_with_u0(g, params, &u0, &vars, &vals)?;
            let p1 = (p_prefix - p0).max(0.0);
            let total = p0 + p1;
            let pick_one = total > 0.0 && rng.gen::<f64>() * total >= p0;
            if pick_one {
                *vals.last_mut().unwrap() = 1;
                p_prefix = p1;
            } else {
                p_prefix = p0;
            }
            y[k] = *vals.last().unwrap();
        }
    }
    Ok(y)
}

enum ComponentKind {
    Singleton,
    /// Full table by Moebius inversion of the CDF over `{0,1}^c`.
    Table,
    /// Too large for a table: elimination per configuration.
    Direct,
}

struct ComponentSpec {
    /// Positions into [`SubsetModel::vars`].
    members: Vec<usize>,
    inv_h: Vec<f64>,
    residual: Vec<f64>,
    /// `(local bit a, local bit b, index into SubsetModel::edges)`.
    edges: Vec<(usize, usize, usize)>,
    kind: ComponentKind,
}

/// Structure of the joint distribution of a fixed variable subset under a
/// fixed graph, for evaluating many configurations at many latent points.
pub struct SubsetModel {
    vars: Vec<usize>,
    edges: Vec<Edge>,
    comps: Vec<ComponentSpec>,
    graph: MixedGraph,
}

/// Per-latent-point evaluation state of a [`SubsetModel`].
pub struct SubsetTables {
    tables: Vec<Vec<f64>>,
    u0: Vec<f64>,
    thetas: Vec<f64>,
}

impl SubsetModel {
    pub fn new(g: &MixedGraph, vars: &[usize]) -> Result<Self> {
        let mut vars = vars.to_vec();
        vars.sort_unstable();
        vars.dedup();
        if vars.len() > 64 {
            return Err(Error::Capacity(format!(
                "joint configurations over {} variables do not fit a 64-bit key",
                vars.len()
            )));
        }
        let pos = |v: usize| vars.binary_search(&v).ok();
        let edges: Vec<Edge> = g
            .edges()
            .iter()
            .copied()
            .filter(|e| pos(e.lo()).is_some() && pos(e.hi()).is_some())
            .collect();
        let mut comps = Vec::new();
        for comp in g.bidirected_components(&vars) {
            if comp.len() > MAX_COMPONENT {
                return Err(Error::Capacity(format!(
                    "bi-directed component of {} variables exceeds the limit of {MAX_COMPONENT}",
                    comp.len()
                )));
            }
            let members: Vec<usize> = comp.iter().map(|&v| pos(v).unwrap()).collect();
            let mut r = vec![0usize; comp.len()];
            let mut local_edges = Vec::new();
            for (ei, e) in edges.iter().enumerate() {
                if let (Ok(a), Ok(b)) = (comp.binary_search(&e.lo()), comp.binary_search(&e.hi())) {
                    r[a] += 1;
                    r[b] += 1;
                    local_edges.push((a, b, ei));
                }
            }
            let inv_h: Vec<f64> = comp.iter().map(|&v| 1.0 / g.h(v) as f64).collect();
            let residual = r.iter().zip(&inv_h).map(|(&rk, &ih)| 1.0 - rk as f64 * ih).collect();
            let kind = match comp.len() {
                1 => ComponentKind::Singleton,
                c if c <= MAX_TABLE_COMPONENT => ComponentKind::Table,
                _ => ComponentKind::Direct,
            };
            comps.push(ComponentSpec {
                members,
                inv_h,
                residual,
                edges: local_edges,
                kind,
            });
        }
        Ok(SubsetModel {
            vars,
            edges,
            comps,
            graph: g.clone(),
        })
    }

    /// Sorted global variable ids; bit `k` of a configuration key is `vars()[k]`.
    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    /// Edges with both endpoints in the subset, in graph order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn new_tables(&self) -> SubsetTables {
        SubsetTables {
            tables: self
                .comps
                .iter()
                .map(|c| match c.kind {
                    ComponentKind::Direct => Vec::new(),
                    _ => vec![0.0; 1 << c.members.len()],
                })
                .collect(),
            u0: vec![0.0; self.vars.len()],
            thetas: vec![0.0; self.edges.len()],
        }
    }

    /// Fill `out` for latent point with `P(Y = 0 | x)` values `u0` (by subset
    /// position) and copula parameters `thetas` (aligned with [`Self::edges`]).
    pub fn fill(&self, u0: &[f64], thetas: &[f64], out: &mut SubsetTables) -> Result<()> {
        out.u0.copy_from_slice(u0);
        out.thetas.copy_from_slice(thetas);
        for (spec, table) in self.comps.iter().zip(out.tables.iter_mut()) {
            match spec.kind {
                ComponentKind::Singleton => {
                    let u = u0[spec.members[0]];
                    table[0] = u;
                    table[1] = 1.0 - u;
                }
                ComponentKind::Table => fill_component_table(spec, u0, thetas, table)?,
                ComponentKind::Direct => {}
            }
        }
        Ok(())
    }

    /// Probability of configuration `key` (bit `k` = value of `vars()[k]`)
    /// from tables filled by [`Self::fill`].
    pub fn prob(&self, tables: &SubsetTables, key: u64) -> Result<f64> {
        let mut prob = 1.0;
        for (spec, table) in self.comps.iter().zip(&tables.tables) {
            let v = match spec.kind {
                ComponentKind::Direct => self.direct_prob(spec, tables, key)?,
                _ => {
                    let mut idx = 0usize;
                    for (bit, &m) in spec.members.iter().enumerate() {
                        idx |= (((key >> m) & 1) as usize) << bit;
                    }
                    table[idx]
                }
            };
            prob *= v;
            if prob == 0.0 {
                break;
            }
        }
        Ok(prob)
    }

    /// Local table indices of `key` per component, for repeated lookups.
    pub fn encode(&self, key: u64) -> Vec<usize> {
        self.comps
            .iter()
            .map(|spec| {
                let mut idx = 0usize;
                for (bit, &m) in spec.members.iter().enumerate() {
                    idx |= (((key >> m) & 1) as usize) << bit;
                }
                idx
            })
            .collect()
    }

    /// True when every component has a materialized table, so [`Self::prob_encoded`] applies.
    pub fn all_tabulated(&self) -> bool {
        self.comps.iter().all(|c| !matches!(c.kind, ComponentKind::Direct))
    }

    #[inline]
    pub fn prob_encoded(&self, tables: &SubsetTables, encoded: &[usize]) -> f64 {
        tables
            .tables
            .iter()
            .zip(encoded)
            .map(|(t, &i)| t[i])
            .product()
    }

    fn direct_prob(&self, spec: &ComponentSpec, tables: &SubsetTables, key: u64) -> Result<f64> {
        // Rebuild a parameter view with the current thetas and evaluate by elimination.
        let g = &self.graph;
        let mut params = ModelParams {
            slopes: vec![0.0; g.n_vars()],
            intercepts: vec![0.0; g.n_vars()],
            sigma: crate::model::CorrMatrix::constant(g.partition().n_groups(), 50),
            thetas: Default::default(),
        };
        for &(_, _, ei) in &spec.edges {
            params.thetas.insert(self.edges[ei], tables.thetas[ei]);
        }
        let mut u0_all = vec![0.5; g.n_vars()];
        let mut value_of = vec![u8::MAX; g.n_vars()];
        let comp: Vec<usize> = spec.members.iter().map(|&m| self.vars[m]).collect();
        for &m in &spec.members {
            u0_all[self.vars[m]] = tables.u0[m];
            value_of[self.vars[m]] = ((key >> m) & 1) as u8;
        }
        component_pmf(g, &params, &u0_all, &comp, &value_of)
    }
}

fn fill_component_table(spec: &ComponentSpec, u0: &[f64], thetas: &[f64], t: &mut [f64]) -> Result<()> {
    t.fill(1.0);
    let n = t.len();
    // CDF over {0,1}^c: an item at 1 has CDF argument 1, at 0 its P(Y=0|x).
    for (bit, &m) in spec.members.iter().enumerate() {
        let res = u0[m].powf(spec.residual[bit]);
        if res != 1.0 {
            let mask = 1 << bit;
            for (idx, v) in t.iter_mut().enumerate() {
                if idx & mask == 0 {
                    *v *= res;
                }
            }
        }
    }
    for &(a, b, ei) in &spec.edges {
        let ua = u0[spec.members[a]].powf(spec.inv_h[a]);
        let ub = u0[spec.members[b]].powf(spec.inv_h[b]);
        let kern = FrankKernel::new(thetas[ei]);
        let cab = kern.eval(ua, kern.pre(ua), ub, kern.pre(ub));
        let (ma, mb) = (1 << a, 1 << b);
        for (idx, v) in t.iter_mut().enumerate() {
            match (idx & ma == 0, idx & mb == 0) {
                (true, true) => *v *= cab,
                (true, false) => *v *= ua,
                (false, true) => *v *= ub,
                (false, false) => {}
            }
        }
    }
    // Moebius inversion on the Boolean lattice turns the CDF into the PMF.
    let c = spec.members.len();
    for bit in 0..c {
        let mask = 1 << bit;
        for idx in 0..n {
            if idx & mask != 0 {
                t[idx] -= t[idx ^ mask];
            }
        }
    }
    for v in t.iter_mut() {
        *v = check_negative(*v)?;
    }
    Ok(())
}
