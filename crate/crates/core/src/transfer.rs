//! Transfer operators on piecewise-constant densities over a uniform grid.
//!
//! A density is a vector of cell averages. A dual weight vector `w` represents
//! the functional `f -> sum_i w_i f_i`, so Lebesgue is `w_i = 1/n`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::driving::FiberPath;
use crate::maps::{lcm, rational_approx, HoleSpec, PiecewiseAffineMap};
use crate::Error;

const SNAP: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP { r } else { x }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn integral(&self) -> f64 {
        mean(&self.values)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Total variation of the step function with the given cell values.
pub fn variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Sparse `n x n` matrix in compressed rows.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    /// Set when the matrix represents the operator exactly on step functions.
    pub exact: bool,
}

impl TransferMatrix {
    /// `M[i][j] = n * g * Leb(T_b(cell_j ∩ branch_b) ∩ cell_i)` summed over branches,
    /// with weight `g = |slope|^-r`.
    pub fn build(map: &PiecewiseAffineMap, r: f64, n: usize) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 cells".into()));
        }
        let nf = n as f64;
        let mut trip: Vec<(u32, u32, f64)> = Vec::new();
        for b in &map.branches {
            let g = b.slope.abs().powf(-r);
            let j0 = (snap(b.lo * nf).floor() as usize).min(n - 1);
            let j1 = ((snap(b.hi * nf).ceil() as usize).max(1) - 1).min(n - 1);
            for j in j0..=j1 {
                let u = b.lo.max(j as f64 / nf);
                let v = b.hi.min((j + 1) as f64 / nf);
                if v <= u {
                    continue;
                }
                let (ya, yb) = {
                    let p = snap(b.eval(u) * nf);
                    let q = snap(b.eval(v) * nf);
                    (p.min(q), p.max(q))
                };
                let i0 = (ya.floor() as usize).min(n - 1);
                let i1 = ((yb.ceil() as usize).max(1) - 1).min(n - 1);
                for i in i0..=i1 {
                    // overlap in units of cells
                    let l = yb.min((i + 1) as f64) - ya.max(i as f64);
                    if l > SNAP {
                        trip.push((i as u32, j as u32, g * l));
                    }
                }
            }
        }
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(trip.len());
        let mut val: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i as usize + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let on_grid = |x: f64| (x * nf - (x * nf).round()).abs() < SNAP;
        let exact = map.integer_slopes() && map.grid_points().into_iter().all(on_grid);
        Ok(Self { n, row_ptr, col, val, exact })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().position(|&c| c as usize == j).map_or(0.0, |p| self.val[r.start + p])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col[p] as usize, self.val[p])))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// `M f`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n, "dimension mismatch");
        (0..self.n)
            .map(|i| {
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.val[p] * f[self.col[p] as usize];
                }
                s
            })
            .collect()
    }

    /// `M (mask ⊙ f)`.
    pub fn apply_open(&self, mask: Option<&HoleMask>, f: &[f64]) -> Vec<f64> {
        match mask {
            None => self.apply(f),
            Some(m) => {
                let mut g = f.to_vec();
                m.restrict_in_place(&mut g);
                self.apply(&g)
            }
        }
    }

    /// Row vector times matrix, `w^T M`.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n, "dimension mismatch");
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col[p] as usize] += wi * self.val[p];
            }
        }
        out
    }

    /// `(w^T M) ⊙ mask`, the dual of the open operator.
    pub fn apply_transpose_open(&self, mask: Option<&HoleMask>, w: &[f64]) -> Vec<f64> {
        let mut out = self.apply_transpose(w);
        if let Some(m) = mask {
            m.restrict_in_place(&mut out);
        }
        out
    }

    /// Columns as sorted `(row, value)` lists.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n];
        for (i, j, v) in self.triplets() {
            cols[j].push((i, v));
        }
        cols
    }

    pub fn write_coo_csv(&self, path: &std::path::Path) -> Result<(), Error> {
        let rows: Vec<Vec<String>> = self.triplets().map(|(i, j, v)| vec![i.to_string(), j.to_string(), format!("{v:.17e}")]).collect();
        crate::report::write_csv_atomic(path, &["row", "col", "value"], &rows)
    }
}

/// `M ∘ diag(mask)` as a standalone matrix.
pub fn open_operator(m: &TransferMatrix, mask: &HoleMask) -> Result<TransferMatrix, Error> {
    if mask.n != m.n {
        return Err(Error::InvalidInput(format!("mask has {} cells, matrix {}", mask.n, m.n)));
    }
    let dense = mask.to_dense();
    let mut out = m.clone();
    for p in 0..out.val.len() {
        out.val[p] *= dense[out.col[p] as usize];
    }
    Ok(out)
}

/// Fractional cell coverage of a hole, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleMask {
    pub n: usize,
    /// `(cell, fraction of the cell inside the hole)`, sorted by cell.
    pub covered: Vec<(usize, f64)>,
}

impl HoleMask {
    pub fn new(hole: &HoleSpec, n: usize) -> Self {
        let nf = n as f64;
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &(a, b) in &hole.intervals {
            let (pa, pb) = (snap(a * nf), snap(b * nf));
            let i0 = (pa.floor() as usize).min(n - 1);
            let i1 = ((pb.ceil() as usize).max(1) - 1).min(n - 1);
            for i in i0..=i1 {
                let l = pb.min((i + 1) as f64) - pa.max(i as f64);
                if l > 0.0 {
                    *acc.entry(i).or_insert(0.0) += l;
                }
            }
        }
        let mut covered: Vec<(usize, f64)> = acc.into_iter().map(|(i, c)| (i, c.min(1.0))).collect();
        covered.sort_by_key(|c| c.0);
        Self { n, covered }
    }

    pub fn closed(n: usize) -> Self {
        Self { n, covered: Vec::new() }
    }

    /// Entry `i` of the mask: the fraction of cell `i` outside the hole.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![1.0; self.n];
        for &(i, c) in &self.covered {
            d[i] = 1.0 - c;
        }
        d
    }

    pub fn leb(&self) -> f64 {
        self.covered.iter().map(|c| c.1).sum::<f64>() / self.n as f64
    }

    /// `f <- f ⊙ mask`.
    pub fn restrict_in_place(&self, f: &mut [f64]) {
        for &(i, c) in &self.covered {
            f[i] *= 1.0 - c;
        }
    }

    /// The part of `f` inside the hole, `f ⊙ (1 - mask)`.
    pub fn hole_part(&self, f: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for &(i, c) in &self.covered {
            g[i] = f[i] * c;
        }
        g
    }

    /// `sum_i w_i f_i (1 - mask_i)`.
    pub fn pair_hole(&self, w: &[f64], f: &[f64]) -> f64 {
        self.covered.iter().map(|&(i, c)| w[i] * f[i] * c).sum()
    }

    /// Entrywise `self >= other` as masks, i.e. this hole inside the other.
    pub fn dominates(&self, other: &HoleMask) -> bool {
        let a = self.to_dense();
        let b = other.to_dense();
        a.iter().zip(&b).all(|(x, y)| *x >= *y - 1e-12)
    }
}

/// Grid size and whether every supplied point is a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridChoice {
    pub n: usize,
    pub aligned: bool,
}

/// Smallest multiple of the common denominator of `points` at least `min_cells`.
/// Falls back to `min_cells` unaligned when a point is irrational or the
/// common denominator exceeds `max_cells`.
pub fn choose_grid(points: &[f64], min_cells: usize, max_cells: usize) -> GridChoice {
    let mut den: u64 = 1;
    for &x in points {
        match rational_approx(x, max_cells as u64) {
            Some((_, q)) => {
                den = lcm(den, q);
                if den > max_cells as u64 {
                    return GridChoice { n: min_cells, aligned: false };
                }
            }
            None => return GridChoice { n: min_cells, aligned: false },
        }
    }
    let den = den as usize;
    let mut n = den * min_cells.div_ceil(den).max(1);
    if n > max_cells {
        n = den * (max_cells / den);
    }
    GridChoice { n: n.max(2), aligned: true }
}

/// Closed transfer matrices along a fiber path.
#[derive(Debug, Clone)]
pub struct OperatorPath {
    pub path: Arc<FiberPath>,
    pub n: usize,
    pub r: f64,
    mats: Vec<Arc<TransferMatrix>>,
}

impl OperatorPath {
    pub fn new(path: Arc<FiberPath>, n: usize, r: f64) -> Result<Self, Error> {
        let mut cache: HashMap<Vec<u64>, Arc<TransferMatrix>> = HashMap::new();
        let mut mats = Vec::with_capacity(path.len());
        for p in &path.params {
            let key = p.map.key();
            let m = match cache.get(&key) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(TransferMatrix::build(&p.map, r, n)?);
                    cache.insert(key, m.clone());
                    m
                }
            };
            mats.push(m);
        }
        Ok(Self { path, n, r, mats })
    }

    pub fn matrix(&self, k: i64) -> &TransferMatrix {
        assert!(self.path.contains(k), "fiber {k} outside window");
        &self.mats[(k + self.path.back) as usize]
    }

    pub fn exact(&self) -> bool {
        self.mats.iter().all(|m| m.exact)
    }

    pub fn lo(&self) -> i64 {
        -self.path.back
    }

    pub fn hi(&self) -> i64 {
        self.path.forward
    }

    pub fn leb(&self) -> Vec<f64> {
        vec![1.0 / self.n as f64; self.n]
    }
}

/// Holes of one level along the window of an operator path.
#[derive(Debug, Clone)]
pub struct HoleLevel {
    /// The level parameter (for example `N`).
    pub label: f64,
    pub back: i64,
    pub specs: Vec<HoleSpec>,
    pub masks: Vec<HoleMask>,
}

impl HoleLevel {
    pub fn new(label: f64, back: i64, specs: Vec<HoleSpec>, n: usize) -> Self {
        let masks = specs.iter().map(|h| HoleMask::new(h, n)).collect();
        Self { label, back, specs, masks }
    }

    pub fn mask(&self, k: i64) -> &HoleMask {
        &self.masks[(k + self.back) as usize]
    }

    pub fn spec(&self, k: i64) -> &HoleSpec {
        &self.specs[(k + self.back) as usize]
    }
}

/// `L_{k0+steps-1} ∘ … ∘ L_{k0} f`, open when `holes` is given.
pub fn cocycle_apply(ops: &OperatorPath, holes: Option<&HoleLevel>, k0: i64, steps: usize, f: &[f64]) -> Result<Vec<f64>, Error> {
    let end = k0 + steps as i64;
    if k0 < ops.lo() || (steps > 0 && end - 1 > ops.hi()) {
        return Err(Error::WindowOverflow { lo: k0, hi: end, window: (ops.lo(), ops.hi()) });
    }
    let mut g = f.to_vec();
    for k in k0..end {
        g = ops.matrix(k).apply_open(holes.map(|h| h.mask(k)), &g);
    }
    Ok(g)
}

/// Lasota–Yorke check on single-cell step functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LasotaYorke {
    /// `9 * sup g^(n')`.
    pub bound: f64,
    /// `max_j var(L^n' e_j) / var(e_j)`.
    pub empirical: f64,
    /// Smallest `B` with `var(L e_j) <= bound var(e_j) + B ||e_j||_1` over the basis.
    pub b_term: f64,
}

pub fn lasota_yorke_diagnostic(ops: &OperatorPath, holes: Option<&HoleLevel>, k: i64, n_prime: usize) -> Result<LasotaYorke, Error> {
    let n = ops.n;
    let sup_g = crate::assumptions::sup_weight_product(ops, holes, k, n_prime);
    let bound = 9.0 * sup_g;
    let mut empirical: f64 = 0.0;
    let mut b_term: f64 = 0.0;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let v_in = variation(&e);
        let img = cocycle_apply(ops, holes, k, n_prime, &e)?;
        let v_out = variation(&img);
        empirical = empirical.max(v_out / v_in);
        b_term = b_term.max((v_out - bound * v_in) * n as f64);
    }
    Ok(LasotaYorke { bound, empirical, b_term: b_term.max(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{make_beta_map, make_example1_map};

    #[test]
    fn tripling_matrix_is_uniform() {
        let m = TransferMatrix::build(&make_beta_map(3.0, 0.0).unwrap(), 1.0, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.entry(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(m.exact);
    }

    #[test]
    fn tripling_matrix_matches_quadrature() {
        // columns of M against sampled preimage sums: (M e_j)_i = n ∫_{cell i} sum_y g e_j(y) dx
        let t = make_beta_map(3.0, 0.0).unwrap();
        let n = 6;
        let m = TransferMatrix::build(&t, 1.0, n).unwrap();
        let samples = 100_000;
        for i in 0..n {
            let mut acc = vec![0.0; n];
            for s in 0..samples {
                let x = (i as f64 + (s as f64 + 0.5) / samples as f64) / n as f64;
                for (y, _) in t.preimages(x) {
                    let j = ((y * n as f64) as usize).min(n - 1);
                    acc[j] += 1.0 / 3.0 / samples as f64;
                }
            }
            for j in 0..n {
                assert!((m.entry(i, j) - acc[j]).abs() < 1e-4, "({i},{j}) {} vs {}", m.entry(i, j), acc[j]);
            }
        }
    }

    #[test]
    fn counting_weight_counts_branches() {
        let m = TransferMatrix::build(&make_beta_map(3.0, 0.0).unwrap(), 0.0, 12).unwrap();
        for v in m.apply(&[1.0; 12]) {
            assert!((v - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn example1_preserves_constants() {
        for (s, n) in [(2.0, 4), (3.0, 6), (2.0, 100), (1.5, 30)] {
            let m = TransferMatrix::build(&make_example1_map(s).unwrap(), 1.0, n).unwrap();
            for v in m.apply(&vec![1.0; n]) {
                assert!((v - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn example1_four_cell_matrix() {
        let m = TransferMatrix::build(&make_example1_map(2.0).unwrap(), 1.0, 4).unwrap();
        let want = [[0.25, 0.5, 0.0, 0.25], [0.25, 0.5, 0.0, 0.25], [0.25, 0.0, 0.5, 0.25], [0.25, 0.0, 0.5, 0.25]];
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.entry(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
        assert!(m.exact);
    }

    #[test]
    fn open_operator_cases() {
        let m = TransferMatrix::build(&make_example1_map(2.0).unwrap(), 1.0, 100).unwrap();
        let ones = HoleMask::closed(100);
        let same = open_operator(&m, &ones).unwrap();
        assert!(m.triplets().zip(same.triplets()).all(|(a, b)| a == b));
        let full = HoleMask::new(&HoleSpec::new(vec![(0.0, 1.0)]).unwrap(), 100);
        assert!(open_operator(&m, &full).unwrap().triplets().all(|t| t.2 == 0.0));
        let hole = HoleMask::new(&HoleSpec::new(vec![(0.49, 0.51)]).unwrap(), 100);
        let open = open_operator(&m, &hole).unwrap();
        let one = vec![1.0; 100];
        let delta = mean(&m.apply(&one)) - mean(&open.apply(&one));
        assert!((delta - 0.02).abs() < 1e-13);
        assert!(open_operator(&m, &HoleMask::closed(50)).is_err());
    }

    #[test]
    fn fractional_mask_measure() {
        let h = HoleSpec::new(vec![(0.123, 0.4567), (0.9, 0.95)]).unwrap();
        let m = HoleMask::new(&h, 37);
        assert!((m.leb() - h.leb()).abs() < 1e-15);
    }

    #[test]
    fn grid_choice() {
        let g = choose_grid(&[0.25, 0.75, 0.5 - 1.0 / 20000.0], 1000, 1 << 18);
        assert_eq!(g, GridChoice { n: 20000, aligned: true });
        let g = choose_grid(&[std::f64::consts::SQRT_2 - 1.0], 1000, 1 << 18);
        assert!(!g.aligned);
        assert_eq!(g.n, 1000);
    }

    #[test]
    fn lasota_yorke_tripling() {
        use crate::driving::*;
        use crate::evt::ObservableFamily;
        use crate::maps::MapFamily;
        let a = ParameterAssignment {
            map: MapFamily::Beta { beta: ParamExpr::Const(3.0), shift: ParamExpr::Const(0.0) },
            observable: ObservableFamily::Quadratic { center: ParamExpr::Const(0.5) },
            scaling: ParamExpr::Const(1.0),
        };
        let d = DrivingSystem::shift(vec![1.0, 0.0], a).unwrap();
        let p = Arc::new(sample_fiber_path(&d, 0, 0, 2).unwrap());
        let ops = OperatorPath::new(p, 300, 1.0).unwrap();
        let ly = lasota_yorke_diagnostic(&ops, None, 0, 1).unwrap();
        assert!((ly.bound - 3.0).abs() < 1e-12);
        assert!(ly.empirical <= ly.bound + 1e-12);
        assert!(variation(&ops.matrix(0).apply(&[1.0; 300])).abs() < 1e-12);
    }
}
