use crate::{Error, Result};

/// Rank-3 array of discrete symbols, laid out like
// [`FeatureCuboid`]: channel-major, row, then column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeCuboid {
    channels: usize,
    height: usize,
    width: usize,
    alphabet: usize,
    symbols: Vec<u16>,
}

impl CodeCuboid {
    pub fn zeros(channels: usize, height: usize, width: usize, alphabet: usize) -> Result<Self> {
        if alphabet == 0 || alphabet > 1 << 16 {
            return Err(Error::config(format!("alphabet size {alphabet} out of range [1, 65536]")));
        }
        Ok(CodeCuboid { channels, height, width, alphabet, symbols: vec![0; channels * height * width] })
    }

    pub fn from_symbols(
        channels: usize,
        height: usize,
        width: usize,
        alphabet: usize,
        symbols: Vec<u16>,
    ) -> Result<Self> {
        if symbols.len() != channels * height * width {
            return Err(Error::config(format!(
                "symbol count {} does not match shape {}x{}x{}",
                symbols.len(),
                channels,
                height,
                width
            )));
        }
        let mut c = Self::zeros(channels, height, width, alphabet)?;
        for (i, &s) in symbols.iter().enumerate() {
            if (s as usize) >= alphabet {
                return Err(Error::corrupt(format!(
                    "symbol {s} at index {i} outside alphabet of size {alphabet}"
                )));
            }
        }
        c.symbols = symbols;
        Ok(c)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u16 {
        self.symbols[self.idx(c, y, x)]
    }

    /// Panics in debug builds if the symbol is outside the alphabet.
    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, s: u16) {
        debug_assert!((s as usize) < self.alphabet);
        let i = self.idx(c, y, x);
        self.symbols[i] = s;
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.symbols
    }
}
