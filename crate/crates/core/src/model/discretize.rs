use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{PricePaths, SymbolPaths};

/// Affine quantizer between prices on `[x_min, x_max]` and `m`-bit symbols.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationMap {
    x_min: f64,
    x_max: f64,
    bits: u32,
}

pub const MAX_BITS: u32 = 16;

impl DiscretizationMap {
    pub fn new(x_min: f64, x_max: f64, bits: u32) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidInput(format!("bits per symbol must be in 1..={MAX_BITS}, got {bits}")));
        }
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidInput("discretization bounds must be finite".into()));
        }
        if x_max <= x_min {
            return Err(Error::Degenerate(format!("x_max ({x_max}) must exceed x_min ({x_min})")));
        }
        Ok(Self { x_min, x_max, bits })
    }

    /// Bounds taken as the global min and max over every entry of `paths`.
    pub fn fit(paths: &PricePaths, bits: u32) -> Result<Self> {
        if paths.n_paths() == 0 || paths.n_cols() == 0 {
            return Err(Error::InvalidInput("cannot discretize an empty path set".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in paths.data() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("path value {x}")));
            }
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if hi == lo {
            return Err(Error::Degenerate(format!("constant dataset (every value is {lo})")));
        }
        Self::new(lo, hi, bits)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Alphabet size `2^m`.
    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    fn top(&self) -> f64 {
        (self.levels() - 1) as f64
    }

    /// `floor((2^m − 1)(x − x_min)/(x_max − x_min))`, clamped to the alphabet.
    /// A value equal to a decoded grid point encodes back to that symbol.
    pub fn encode_value(&self, x: f64) -> u32 {
        let t = self.top() * ((x - self.x_min) / (self.x_max - self.x_min));
        let k = t.floor().clamp(0.0, self.top()) as u32;
        // floor can land one below when x is a grid point rounded down
        if (k as f64) < self.top() && self.grid_point(k + 1) <= x {
            k + 1
        } else {
            k
        }
    }

    fn grid_point(&self, symbol: u32) -> f64 {
        self.x_min + symbol as f64 / self.top() * (self.x_max - self.x_min)
    }

    /// `x_min + s/(2^m − 1)·(x_max − x_min)`.
    pub fn decode(&self, symbol: u32) -> Result<f64> {
        if symbol as usize >= self.levels() {
            return Err(Error::SymbolOutOfRange { symbol, bits: self.bits });
        }
        Ok(self.grid_point(symbol))
    }

    /// Width of one grid cell, the rounding error bound of `decode ∘ encode`.
    pub fn resolution(&self) -> f64 {
        (self.x_max - self.x_min) / self.top()
    }

    pub fn encode_paths(&self, paths: &PricePaths) -> SymbolPaths {
        let data = paths.data().iter().map(|&x| self.encode_value(x)).collect();
        SymbolPaths::new(paths.n_paths(), paths.n_cols(), paths.first_time(), data)
            .expect("same shape")
    }

    pub fn decode_paths(&self, symbols: &SymbolPaths) -> Result<PricePaths> {
        let data = symbols.data().iter().map(|&s| self.decode(s)).collect::<Result<Vec<_>>>()?;
        PricePaths::new(symbols.n_paths(), symbols.n_cols(), symbols.first_time(), data)
    }
}

/// Fit a discretization to `paths` and encode every entry.
pub fn encode(paths: &PricePaths, bits: u32) -> Result<(SymbolPaths, DiscretizationMap)> {
    let disc = DiscretizationMap::fit(paths, bits)?;
    Ok((disc.encode_paths(paths), disc))
}

pub fn decode(symbol: u32, disc: &DiscretizationMap) -> Result<f64> {
    disc.decode(symbol)
}
