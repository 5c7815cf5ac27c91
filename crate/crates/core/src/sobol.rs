//! Unscrambled Sobol points in natural (non-Gray-code) order.
//!
//! Point `i` is the XOR of the direction numbers selected by the binary digits
//! of `i`, so the first coordinate is the base-2 radical inverse of `i`.

use crate::error::{Error, Result};

const BITS: usize = 32;

/// (degree s, polynomial coefficient bits a, initial m_1..m_s) for dimensions 2..
/// From the Joe–Kuo `new-joe-kuo-6.21201` table.
const DIRECTION_TABLE: &[(usize, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

pub const MAX_DIM: usize = DIRECTION_TABLE.len() + 1;

#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Design(format!(
                "Sobol dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        let directions = (0..dim).map(direction_numbers).collect();
        Ok(Self { directions })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// The `index`-th point in `[0, 1)^d`; index 0 is the origin.
    pub fn point(&self, index: u64) -> Vec<f64> {
        assert!(index < (1u64 << BITS), "Sobol index out of range");
        self.directions
            .iter()
            .map(|v| {
                let mut x = 0u32;
                let mut i = index;
                let mut k = 0;
                while i != 0 {
                    if i & 1 == 1 {
                        x ^= v[k];
                    }
                    i >>= 1;
                    k += 1;
                }
                x as f64 / (1u64 << BITS) as f64
            })
            .collect()
    }
}

fn direction_numbers(axis: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if axis == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, init) = DIRECTION_TABLE[axis - 1];
    let mut m: Vec<u32> = init.to_vec();
    for k in s..BITS {
        let mut next = m[k - s] ^ (m[k - s] << s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                next ^= m[k - i] << i;
            }
        }
        m.push(next);
    }
    for k in 0..BITS {
        v[k] = m[k] << (BITS - 1 - k);
    }
    v
}

/// Base-2 radical inverse of `i`.
pub fn radical_inverse(mut i: u64) -> f64 {
    let mut r = 0.0;
    let mut f = 0.5;
    while i != 0 {
        if i & 1 == 1 {
            r += f;
        }
        i >>= 1;
        f *= 0.5;
    }
    r
}
