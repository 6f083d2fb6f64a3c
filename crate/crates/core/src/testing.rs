//! Fixtures with known ground truth, shared by unit tests, integration tests and benches.

use num_complex::Complex64;
use rand::Rng;

use crate::kspace::{GridSpec, MultiCoilKspace};
use crate::rng;

/// K-space whose lines satisfy `line(i + 1)[k] = G · line(i)[k]` exactly.
pub struct ShiftConsistent {
    pub kspace: MultiCoilKspace,
    /// Row-major `n_coils × n_coils` unitary coil-mixing operator `G`.
    pub operator: Vec<Complex64>,
}

/// Random unitary `n × n` matrix via Gram-Schmidt on a seeded complex Gaussian-ish matrix.
pub fn random_unitary(n: usize, seed: u64) -> Vec<Complex64> {
    let mut r = rng::stream(seed, &[0x0417]);
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect();
        for q in &cols {
            let proj: Complex64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-3 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut g = vec![Complex64::default(); n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            g[i * n + j] = *v;
        }
    }
    g
}

/// Builds [`ShiftConsistent`] data by applying a random unitary `G` line after line
/// starting from a random seed line.
pub fn shift_consistent_kspace(grid: GridSpec, seed: u64) -> ShiftConsistent {
    let nc = grid.n_coils;
    let g = random_unitary(nc, seed);
    let mut r = rng::stream(seed, &[0x5EED]);
    let mut ksp = MultiCoilKspace::zeros(grid);
    for k in 0..grid.n_readout {
        for c in 0..nc {
            ksp.set(
                0,
                k,
                c,
                Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)),
            );
        }
    }
    let mut prev = vec![Complex64::default(); nc];
    for l in 1..grid.n_lines {
        for k in 0..grid.n_readout {
            for (c, p) in prev.iter_mut().enumerate() {
                *p = ksp.get(l - 1, k, c);
            }
            for t in 0..nc {
                let v: Complex64 = (0..nc).map(|s| g[t * nc + s] * prev[s]).sum();
                ksp.set(l, k, t, v);
            }
        }
    }
    ShiftConsistent {
        kspace: ksp,
        operator: g,
    }
}
