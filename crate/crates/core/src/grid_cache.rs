//! Process-wide memo of immutable grids and quadrature rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::Result;
use crate::hermite_basis::{BasisGrid, DEFAULT_COEFF_BUDGET};
use crate::quadrature::GaussLaguerre;

type BasisMap = HashMap<(usize, usize, usize, u64), Arc<BasisGrid>>;

fn bases() -> &'static Mutex<BasisMap> {
    static CELL: OnceLock<Mutex<BasisMap>> = OnceLock::new();
    CELL.get_or_init(|| Mutex::new(HashMap::new()))
}

fn laguerres() -> &'static Mutex<HashMap<(usize, u64), Arc<GaussLaguerre>>> {
    static CELL: OnceLock<Mutex<HashMap<(usize, u64), Arc<GaussLaguerre>>>> = OnceLock::new();
    CELL.get_or_init(|| Mutex::new(HashMap::new()))
}

fn memo_basis(key: (usize, usize, usize, u64), make: impl FnOnce() -> Result<BasisGrid>) -> Result<Arc<BasisGrid>> {
    if let Some(b) = bases().lock().expect("grid cache poisoned").get(&key) {
        return Ok(b.clone());
    }
    let built = Arc::new(make()?);
    let mut map = bases().lock().expect("grid cache poisoned");
    Ok(map.entry(key).or_insert(built).clone())
}

/// Standard basis `(d, N, q)`.
pub fn basis(dim: usize, max_degree: usize, quad_per_axis: usize) -> Result<Arc<BasisGrid>> {
    memo_basis((dim, max_degree, quad_per_axis, 1f64.to_bits()), || {
        BasisGrid::new(dim, max_degree, quad_per_axis, DEFAULT_COEFF_BUDGET)
    })
}

/// Standard basis with the minimal exact quadrature `2(N + 1)`.
pub fn default_basis(dim: usize, max_degree: usize) -> Result<Arc<BasisGrid>> {
    basis(dim, max_degree, 2 * (max_degree + 1))
}

/// De-aliasing grid for degree-`p` products.
pub fn dealiased(dim: usize, max_degree: usize, p: usize) -> Result<Arc<BasisGrid>> {
    let probe_scale = (2.0 / (p as f64 + 1.0)).sqrt();
    let q = ((p + 1) * max_degree + 1).div_ceil(2).max(1);
    memo_basis((dim, max_degree, q, probe_scale.to_bits()), || {
        BasisGrid::dealiased(dim, max_degree, p)
    })
}

pub fn laguerre(k: usize, alpha: f64) -> Result<Arc<GaussLaguerre>> {
    let key = (k, alpha.to_bits());
    if let Some(g) = laguerres().lock().expect("grid cache poisoned").get(&key) {
        return Ok(g.clone());
    }
    let built = Arc::new(GaussLaguerre::new(k, alpha)?);
    let mut map = laguerres().lock().expect("grid cache poisoned");
    Ok(map.entry(key).or_insert(built).clone())
}
