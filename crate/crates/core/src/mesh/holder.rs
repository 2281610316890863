use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IndexBox, ScalarField};
use crate::error::{Error, Result};
use crate::par;

/// Largest number of node pairs examined exhaustively.
pub const DEFAULT_PAIR_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every node pair of the region was visited.
    Exact { pairs: u64 },
    /// All pairs within `local_radius` nodes plus seeded random pairs stratified by distance.
    Stratified { pairs: u64, local_radius: usize, seed: u64 },
}

/// `||f||_{C^{0,alpha}} = sup |f| + [f]_alpha` over a node region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderNorm {
    pub alpha: f64,
    pub sup_part: f64,
    pub seminorm_part: f64,
    pub total: f64,
    pub mode: SamplingMode,
}

#[inline]
fn ratio(df: f64, d2: f64, half_alpha: f64) -> f64 {
    if half_alpha == 0.5 {
        df / d2.sqrt()
    } else {
        df / d2.powf(half_alpha)
    }
}

pub fn holder_norm(
    f: &ScalarField,
    alpha: f64,
    region: &IndexBox,
    pair_budget: usize,
    seed: u64,
) -> Result<HolderNorm> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!(
            "Holder exponent must lie in (0, 1], got {alpha}"
        )));
    }
    if region.is_empty() {
        return Err(Error::domain("Holder norm over an empty region"));
    }
    region.check_within(f.grid())?;
    let grid = *f.grid();
    let nodes: Vec<[usize; 3]> = region.nodes().collect();
    let n = nodes.len();
    let values: Vec<f64> = nodes.iter().map(|&ijk| f.at(ijk)).collect();
    let sup_part = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = grid.spacing();
    let half_alpha = 0.5 * alpha;

    let total_pairs = (n as u64) * (n as u64 - 1) / 2;
    let constant = values.iter().all(|&v| v == values[0]);
    let (seminorm_part, mode) = if constant {
        (0.0, SamplingMode::Exact { pairs: total_pairs })
    } else if total_pairs <= pair_budget as u64 {
        let coords: Vec<[f64; 3]> = nodes.iter().map(|&ijk| grid.coords(ijk)).collect();
        let semi = par::max(n, |i| {
            let (pi, fi) = (coords[i], values[i]);
            let mut best = 0.0f64;
            for j in i + 1..n {
                let pj = coords[j];
                let d2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2);
                best = best.max(ratio((fi - values[j]).abs(), d2, half_alpha));
            }
            best
        });
        (semi.max(0.0), SamplingMode::Exact { pairs: total_pairs })
    } else {
        stratified(region, &values, h, half_alpha, pair_budget, seed)
    };
    Ok(HolderNorm {
        alpha,
        sup_part,
        seminorm_part,
        total: sup_part + seminorm_part,
        mode,
    })
}

/// `||f||_{C^{1,alpha}} = sup |f| + sum_i (sup |d_i f| + [d_i f]_alpha)` over a
/// node region, with derivatives from [`gradient`](super::gradient) on the full grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1HolderNorm {
    pub alpha: f64,
    pub sup_part: f64,
    pub derivative_parts: [HolderNorm; 3],
    pub total: f64,
}

pub fn holder_norm_c1(
    f: &ScalarField,
    alpha: f64,
    region: &IndexBox,
    pair_budget: usize,
    seed: u64,
) -> Result<C1HolderNorm> {
    region.check_within(f.grid())?;
    let sup_part = region.nodes().fold(0.0f64, |m, ijk| m.max(f.at(ijk).abs()));
    let grad = super::gradient(f);
    let parts = [0, 1, 2]
        .into_iter()
        .map(|a| {
            holder_norm(
                &grad.components[a],
                alpha,
                region,
                pair_budget,
                seed.wrapping_add(a as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let derivative_parts = [parts[0], parts[1], parts[2]];
    Ok(C1HolderNorm {
        alpha,
        sup_part,
        total: sup_part + derivative_parts.iter().map(|p| p.total).sum::<f64>(),
        derivative_parts,
    })
}

fn stratified(
    region: &IndexBox,
    values: &[f64],
    h: [f64; 3],
    half_alpha: f64,
    pair_budget: usize,
    seed: u64,
) -> (f64, SamplingMode) {
    let dims = region.dims();
    let n = values.len();
    let at = |i: usize, j: usize, k: usize| values[(i * dims[1] + j) * dims[2] + k];
    let half_count = |r: usize| ((2 * r + 1).pow(3) - 1) / 2;
    let mut local_radius = 1;
    for r in [3, 2] {
        if n * half_count(r) <= pair_budget / 2 {
            local_radius = r;
            break;
        }
    }
    let r = local_radius as i64;
    // Lexicographically positive offsets within the local cube.
    let offsets: Vec<[i64; 3]> = (-r..=r)
        .flat_map(|a| (-r..=r).flat_map(move |b| (-r..=r).map(move |c| [a, b, c])))
        .filter(|o| *o > [0, 0, 0])
        .collect();
    let d2_of = |o: [i64; 3]| (0..3).map(|a| (o[a] as f64 * h[a]).powi(2)).sum::<f64>();
    let offset_d2: Vec<f64> = offsets.iter().map(|&o| d2_of(o)).collect();

    let local = par::max(n, |idx| {
        let k = idx % dims[2];
        let j = (idx / dims[2]) % dims[1];
        let i = idx / (dims[1] * dims[2]);
        let fi = values[idx];
        let mut best = 0.0f64;
        for (o, &d2) in offsets.iter().zip(&offset_d2) {
            let (ii, jj, kk) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
            if ii < 0 || jj < 0 || kk < 0 || ii >= dims[0] as i64 || jj >= dims[1] as i64 || kk >= dims[2] as i64 {
                continue;
            }
            best = best.max(ratio(
                (fi - at(ii as usize, jj as usize, kk as usize)).abs(),
                d2,
                half_alpha,
            ));
        }
        best
    });

    let local_pairs = (n * offsets.len()) as u64;
    let remaining = (pair_budget as u64).saturating_sub(local_pairs);
    let max_dim = *dims.iter().max().unwrap() as i64;
    let mut bins = Vec::new();
    let mut reach = 2 * r;
    while reach < 2 * max_dim {
        bins.push(reach.min(max_dim));
        reach *= 2;
    }
    bins.push(max_dim);
    let per_bin = remaining / bins.len() as u64;
    let random = par::map_slice(&bins.iter().copied().enumerate().collect::<Vec<_>>(), |&(b, reach)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(b as u64 + 1)));
        let mut best = 0.0f64;
        for _ in 0..per_bin {
            let anchor = [0, 1, 2].map(|a| rng.gen_range(0..dims[a] as i64));
            let o = [0, 1, 2].map(|_| rng.gen_range(-reach..=reach));
            if o.iter().all(|c| c.abs() <= r) {
                continue;
            }
            let partner = [0, 1, 2].map(|a| anchor[a] + o[a]);
            if (0..3).any(|a| partner[a] < 0 || partner[a] >= dims[a] as i64) {
                continue;
            }
            let fa = at(anchor[0] as usize, anchor[1] as usize, anchor[2] as usize);
            let fb = at(partner[0] as usize, partner[1] as usize, partner[2] as usize);
            best = best.max(ratio((fa - fb).abs(), d2_of(o), half_alpha));
        }
        best
    })
    .into_iter()
    .fold(0.0f64, f64::max);

    (
        local.max(random).max(0.0),
        SamplingMode::Stratified {
            pairs: local_pairs + per_bin * bins.len() as u64,
            local_radius,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;

    #[test]
    fn constant_field() {
        let g = Grid::cube([0.0; 3], 1.0, 9).unwrap();
        let f = ScalarField::constant(g, 5.0);
        let n = holder_norm(&f, 0.3, &g.full_box(), DEFAULT_PAIR_BUDGET, 1).unwrap();
        assert_eq!(n.total, 5.0);
        assert_eq!(n.seminorm_part, 0.0);
        assert!(matches!(n.mode, SamplingMode::Exact { .. }));
    }

    #[test]
    fn linear_field_lipschitz() {
        let g = Grid::from_bounds([0.0; 3], [1.0; 3], [9; 3]).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0]);
        let n = holder_norm(&f, 1.0, &g.full_box(), DEFAULT_PAIR_BUDGET, 1).unwrap();
        assert!((n.sup_part - 1.0).abs() < 1e-14);
        assert!((n.seminorm_part - 1.0).abs() < 1e-12);
        assert!((n.total - n.sup_part - n.seminorm_part).abs() < 1e-15);
    }

    #[test]
    fn square_root_cone_is_half_holder_with_unit_constant() {
        // Brute force over all pairs on a 7^3 lattice: the maximum is attained on pairs through x0.
        let g = Grid::cube([0.0; 3], 1.0, 7).unwrap();
        let x0 = [0.0; 3];
        let f = ScalarField::from_fn(g, |p| crate::mesh::distance(p, x0).sqrt());
        let n = holder_norm(&f, 0.5, &g.full_box(), DEFAULT_PAIR_BUDGET, 1).unwrap();
        let mut brute = 0.0f64;
        for a in 0..g.len() {
            for b in 0..g.len() {
                if a != b {
                    let d = crate::mesh::distance(g.node_coords(a), g.node_coords(b));
                    brute = brute.max((f.values()[a] - f.values()[b]).abs() / d.sqrt());
                }
            }
        }
        assert!((brute - 1.0).abs() < 1e-12);
        assert!((n.seminorm_part - brute).abs() < 1e-12);
    }

    #[test]
    fn sampled_mode_close_to_lipschitz_constant() {
        let g = Grid::cube([0.0; 3], 1.0, 33).unwrap();
        let f = ScalarField::from_fn(g, |p| (2.0 * p[0]).sin() + 0.5 * p[1]);
        // True Lipschitz constant sqrt(4 + 0.25), attained near x = 0.
        let lip = (4.25f64).sqrt();
        let n = holder_norm(&f, 1.0, &g.full_box(), 1_000_000, 9).unwrap();
        assert!(matches!(n.mode, SamplingMode::Stratified { .. }));
        assert!(n.seminorm_part <= lip + 1e-12);
        assert!(n.seminorm_part >= 0.9 * lip, "{}", n.seminorm_part);
        let again = holder_norm(&f, 1.0, &g.full_box(), 1_000_000, 9).unwrap();
        assert_eq!(n, again);
    }

    #[test]
    fn rejects_bad_exponent() {
        let g = Grid::cube([0.0; 3], 1.0, 5).unwrap();
        let f = ScalarField::constant(g, 1.0);
        assert!(holder_norm(&f, 0.0, &g.full_box(), 10, 0).is_err());
        assert!(holder_norm(&f, 1.5, &g.full_box(), 10, 0).is_err());
    }

    #[test]
    fn c1_norm_of_quadratic() {
        // f = x^2 on [-1, 1]: sup 1, f' = 2x with sup 2 and [f']_1 = 2, other parts 0.
        let g = Grid::cube([0.0; 3], 1.0, 9).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] * p[0]);
        let n = holder_norm_c1(&f, 1.0, &g.full_box(), DEFAULT_PAIR_BUDGET, 0).unwrap();
        assert!((n.sup_part - 1.0).abs() < 1e-12);
        assert!((n.total - 5.0).abs() < 1e-9, "{}", n.total);
    }
}
