//! Sum-product variable elimination over binary variables.

/// A table factor over binary variables. Bit `k` of a table index is the
/// value of `vars[k]`.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    pub vars: Vec<usize>,
    pub table: Vec<f64>,
}

impl Factor {
    pub fn constant(v: f64) -> Self {
        Factor { vars: Vec::new(), table: vec![v] }
    }

    pub fn unary(var: usize, t0: f64, t1: f64) -> Self {
        Factor { vars: vec![var], table: vec![t0, t1] }
    }

    /// `table[a + 2b]` where `a` is the value of `v0` and `b` of `v1`.
    pub fn pairwise(v0: usize, v1: usize, table: [f64; 4]) -> Self {
        Factor { vars: vec![v0, v1], table: table.to_vec() }
    }
}

/// Sums the product of `factors` over every assignment of the variables
/// they mention. Elimination order is greedy min-degree, ties broken by the
/// smaller variable id.
pub(crate) fn sum_product(mut factors: Vec<Factor>) -> f64 {
    let mut constant = 1.0;
    factors.retain(|f| {
        if f.vars.is_empty() {
            constant *= f.table[0];
            false
        } else {
            true
        }
    });
    loop {
        let mut remaining: Vec<usize> = factors.iter().flat_map(|f| f.vars.iter().copied()).collect();
        remaining.sort_unstable();
        remaining.dedup();
        let Some(var) = pick_min_degree(&factors, &remaining) else {
            break;
        };
        let (with, without): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.vars.contains(&var));
        factors = without;
        let summed = multiply_and_sum_out(&with, var);
        if summed.vars.is_empty() {
            constant *= summed.table[0];
        } else {
            factors.push(summed);
        }
    }
    constant
}

fn pick_min_degree(factors: &[Factor], remaining: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for &v in remaining {
        let mut nb: Vec<usize> = factors
            .iter()
            .filter(|f| f.vars.contains(&v))
            .flat_map(|f| f.vars.iter().copied())
            .filter(|&u| u != v)
            .collect();
        nb.sort_unstable();
        nb.dedup();
        let d = nb.len();
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, v));
        }
    }
    best.map(|(_, v)| v)
}

fn multiply_and_sum_out(factors: &[Factor], var: usize) -> Factor {
    let mut scope: Vec<usize> = factors.iter().flat_map(|f| f.vars.iter().copied()).collect();
    scope.sort_unstable();
    scope.dedup();
    let pos_var = scope.iter().position(|&v| v == var).expect("var in scope");
    // For each factor, the bit positions (within `scope`) of its variables.
    let maps: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| {
            f.vars
                .iter()
                .map(|v| scope.iter().position(|u| u == v).expect("in scope"))
                .collect()
        })
        .collect();
    let out_vars: Vec<usize> = scope.iter().copied().filter(|&v| v != var).collect();
    let mut out = vec![0.0; 1 << out_vars.len()];
    for a in 0..(1usize << scope.len()) {
        let mut prod = 1.0;
        for (f, map) in factors.iter().zip(&maps) {
            let mut idx = 0;
            for (k, &bitpos) in map.iter().enumerate() {
                idx |= ((a >> bitpos) & 1) << k;
            }
            prod *= f.table[idx];
        }
        // Drop bit `pos_var` from `a` to get the output index.
        let low = a & ((1 << pos_var) - 1);
        let high = (a >> (pos_var + 1)) << pos_var;
        out[low | high] += prod;
    }
    Factor { vars: out_vars, table: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_enumeration_on_a_cycle() {
        // 4-cycle with unary terms; compare against brute force.
        let pair = |a, b, s: f64| Factor::pairwise(a, b, [1.0, s, 2.0 * s, 0.5]);
        let factors = vec![
            Factor::unary(0, 1.0, -0.3),
            Factor::unary(1, 0.7, 0.2),
            Factor::unary(2, 1.1, -0.9),
            Factor::unary(3, 0.4, 1.5),
            pair(0, 1, 0.9),
            pair(1, 2, 1.3),
            pair(2, 3, 0.6),
            pair(3, 0, 1.7),
            Factor::constant(2.0),
        ];
        let mut brute = 0.0;
        for a in 0..16usize {
            let mut prod = 1.0;
            for f in &factors {
                let mut idx = 0;
                for (k, v) in f.vars.iter().enumerate() {
                    idx |= ((a >> v) & 1) << k;
                }
                prod *= f.table[idx];
            }
            brute += prod;
        }
        let ve = sum_product(factors);
        assert!((ve - brute).abs() < 1e-12, "{ve} vs {brute}");
    }
}
