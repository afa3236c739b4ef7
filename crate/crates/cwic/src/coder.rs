//! Integer arithmetic coder.
//!
//! The coder is model-agnostic: every symbol arrives with its own frequency
//! table, so adaptive behavior lives entirely in the caller.  Tables hold
//! cumulative integer frequencies summing to exactly 2^16 with a floor of
//! one count per symbol; coding uses 32-bit low/high registers with the
//! classic carry bookkeeping (emit a bit, then the inverse of every pending
//! underflow bit) and is integer-only, hence bit-exact across platforms.
//!
//! Flush appends one disambiguation bit plus one pending inverse bit at
//! minimum, then zero-pads to a byte boundary.  The decoder may read past
//! the payload end; such reads yield zero bits and are bounded, so a
//! well-formed stream always reconstructs exactly.

use crate::{Error, Result};

/// Total frequency mass of every table.
pub const FREQ_TOTAL: u32 = 1 << 16;

const REG_MAX: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = 3 << 30;

// A valid decode never synthesizes more than register-width zero bits past
// the payload; anything beyond that means the payload was truncated.
const MAX_PAST_END_BITS: u32 = 64;

/// Cumulative integer frequencies over m symbols; `cum[m]` is exactly 2^16
/// and every symbol has frequency at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn from_freqs(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::config("frequency table needs at least one symbol"));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0);
        for (i, &f) in freqs.iter().enumerate() {
            if f == 0 {
                return Err(Error::config(format!("symbol {i} has zero frequency")));
            }
            acc += f as u64;
            if acc > FREQ_TOTAL as u64 {
                return Err(Error::config("frequencies exceed 2^16"));
            }
            cum.push(acc as u32);
        }
        if acc != FREQ_TOTAL as u64 {
            return Err(Error::config(format!("frequencies sum to {acc}, expected {FREQ_TOTAL}")));
        }
        Ok(FreqTable { cum })
    }

    pub fn uniform(num_symbols: usize) -> Result<Self> {
        quantize_pmf(&vec![1.0 / num_symbols.max(1) as f64; num_symbols])
    }

    pub fn num_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    #[inline]
    pub fn bounds(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.cum[symbol + 1])
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Symbol whose cumulative interval contains `value`.
    #[inline]
    fn symbol_for(&self, value: u32) -> usize {
        debug_assert!(value < FREQ_TOTAL);
        self.cum.partition_point(|&c| c <= value) - 1
    }

    /// Ideal code length of `symbol` in bits under this table.
    pub fn bits(&self, symbol: usize) -> f64 {
        -((self.freq(symbol) as f64) / FREQ_TOTAL as f64).log2()
    }
}

/// Largest-remainder apportionment of a PMF onto 2^16 integer counts with a
/// floor of one count per symbol: one count is reserved per symbol, the
/// remaining mass is split proportionally, and leftover units go to the
/// largest fractional remainders (ties to the lowest symbol).
pub fn quantize_pmf(pmf: &[f64]) -> Result<FreqTable> {
    let m = pmf.len();
    if m == 0 {
        return Err(Error::config("empty pmf"));
    }
    if m > FREQ_TOTAL as usize {
        return Err(Error::config(format!(
            "pmf has {m} symbols, more than {FREQ_TOTAL} cannot be apportioned"
        )));
    }
    let mut sum = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::config(format!("pmf entry {i} is {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!("pmf sums to {sum}, expected 1")));
    }
    let distributable = (FREQ_TOTAL as usize - m) as f64;
    let mut freqs = vec![1u32; m];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut assigned = 0usize;
    for (i, &p) in pmf.iter().enumerate() {
        let target = p / sum * distributable;
        let base = target.floor();
        freqs[i] += base as u32;
        assigned += base as usize;
        remainders.push((target - base, i));
    }
    let leftover = FREQ_TOTAL as usize - m - assigned;
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(leftover) {
        freqs[i] += 1;
    }
    FreqTable::from_freqs(&freqs)
}

/// Append-only bit buffer, most significant bit first within each byte.
#[derive(Debug, Default)]
pub struct BitSink {
    bytes: Vec<u8>,
    used_bits: u8,
}

impl BitSink {
    pub fn new() -> Self {
        BitSink::default()
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        if self.used_bits == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= 1 << (7 - self.used_bits);
        }
        self.used_bits = (self.used_bits + 1) % 8;
    }

    /// Zero-pads the final partial byte and returns the buffer.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len_bits(&self) -> usize {
        if self.used_bits == 0 {
            self.bytes.len() * 8
        } else {
            (self.bytes.len() - 1) * 8 + self.used_bits as usize
        }
    }
}

/// Bit reader over a payload slice.  Reads beyond the end never touch the
/// buffer; they return zero bits and are counted so the decoder can tell a
/// truncated payload from normal register drain.
#[derive(Debug)]
pub struct BitSource<'a> {
    bytes: &'a [u8],
    cursor: usize,
    past_end: u32,
}

impl<'a> BitSource<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitSource { bytes, cursor: 0, past_end: 0 }
    }

    #[inline]
    fn next_bit(&mut self) -> u64 {
        let byte = self.cursor / 8;
        if byte >= self.bytes.len() {
            self.past_end += 1;
            return 0;
        }
        let bit = (self.bytes[byte] >> (7 - (self.cursor % 8))) & 1;
        self.cursor += 1;
        bit as u64
    }

    pub fn past_end_bits(&self) -> u32 {
        self.past_end
    }
}

/// Streaming arithmetic encoder.
pub struct ArithmeticEncoder {
    low: u64,
    high: u64,
    pending: u64,
    sink: BitSink,
    /// Ideal cost in bits of everything encoded so far, under the quantized
    /// tables.  Useful for rate accounting and optimality checks.
    ideal_bits: f64,
}

impl ArithmeticEncoder {
    pub fn new() -> Self {
        ArithmeticEncoder { low: 0, high: REG_MAX, pending: 0, sink: BitSink::new(), ideal_bits: 0.0 }
    }

    fn emit(&mut self, bit: bool) {
        self.sink.push(bit);
        for _ in 0..self.pending {
            self.sink.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, symbol: usize, table: &FreqTable) -> Result<()> {
        if symbol >= table.num_symbols() {
            return Err(Error::config(format!(
                "symbol {symbol} outside table of {} symbols",
                table.num_symbols()
            )));
        }
        let (clo, chi) = table.bounds(symbol);
        let range = self.high - self.low + 1;
        self.high = self.low + range * chi as u64 / FREQ_TOTAL as u64 - 1;
        self.low += range * clo as u64 / FREQ_TOTAL as u64;
        self.ideal_bits += table.bits(symbol);
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
        Ok(())
    }

    pub fn ideal_bits(&self) -> f64 {
        self.ideal_bits
    }

    /// Emits the disambiguation bits and zero-pads to a byte.
    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        self.sink.into_bytes()
    }
}

impl Default for ArithmeticEncoder {
    fn default() -> Self {
        Self::new()
    }
}

/// Streaming arithmetic decoder over a payload slice.
pub struct ArithmeticDecoder<'a> {
    low: u64,
    high: u64,
    code: u64,
    src: BitSource<'a>,
}

impl<'a> ArithmeticDecoder<'a> {
    pub fn new(payload: &'a [u8]) -> Self {
        let mut src = BitSource::new(payload);
        let mut code = 0u64;
        for _ in 0..32 {
            code = (code << 1) | src.next_bit();
        }
        ArithmeticDecoder { low: 0, high: REG_MAX, code, src }
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<usize> {
        let range = self.high - self.low + 1;
        let value = ((self.code - self.low + 1) * FREQ_TOTAL as u64 - 1) / range;
        let symbol = table.symbol_for(value as u32);
        let (clo, chi) = table.bounds(symbol);
        self.high = self.low + range * chi as u64 / FREQ_TOTAL as u64 - 1;
        self.low += range * clo as u64 / FREQ_TOTAL as u64;
        loop {
            if self.high < HALF {
                // nothing to subtract
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.code -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.code -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.code = (self.code << 1) | self.src.next_bit();
        }
        if self.src.past_end_bits() > MAX_PAST_END_BITS {
            return Err(Error::corrupt("payload exhausted before expected symbol count"));
        }
        Ok(symbol)
    }
}

/// Encodes a whole stream of (symbol, table) pairs into one payload.
pub fn encode_symbols<'t>(
    stream: impl IntoIterator<Item = (usize, &'t FreqTable)>,
) -> Result<Vec<u8>> {
    let mut enc = ArithmeticEncoder::new();
    for (symbol, table) in stream {
        enc.encode(symbol, table)?;
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols; the provider sees every previously decoded
/// symbol and returns the table for the next one.
pub fn decode_symbols(
    payload: &[u8],
    count: usize,
    mut provider: impl FnMut(&[usize]) -> Result<FreqTable>,
) -> Result<Vec<usize>> {
    let mut dec = ArithmeticDecoder::new(payload);
    let mut decoded = Vec::with_capacity(count);
    for _ in 0..count {
        let table = provider(&decoded)?;
        let symbol = dec.decode(&table)?;
        decoded.push(symbol);
    }
    Ok(decoded)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_table(rng: &mut ChaCha8Rng, m: usize) -> FreqTable {
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
        let sum: f64 = raw.iter().sum();
        if sum == 0.0 {
            return FreqTable::uniform(m).unwrap();
        }
        let pmf: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        quantize_pmf(&pmf).unwrap()
    }

    #[test]
    fn quantize_uniform_four() {
        let t = quantize_pmf(&[0.25; 4]).unwrap();
        for s in 0..4 {
            assert_eq!(t.freq(s), 16384);
        }
    }

    #[test]
    fn quantize_floors_zero_probability() {
        let t = quantize_pmf(&[1.0, 0.0]).unwrap();
        assert_eq!(t.freq(0), 65535);
        assert_eq!(t.freq(1), 1);
    }

    #[test]
    fn quantize_rejects_oversized_alphabet() {
        let m = FREQ_TOTAL as usize + 1;
        let pmf = vec![1.0 / m as f64; m];
        assert!(matches!(quantize_pmf(&pmf), Err(Error::Config(_))));
    }

    #[test]
    fn quantize_full_alphabet_is_all_ones() {
        let m = FREQ_TOTAL as usize;
        let pmf = vec![1.0 / m as f64; m];
        let t = quantize_pmf(&pmf).unwrap();
        assert_eq!(t.freq(0), 1);
        assert_eq!(t.freq(m - 1), 1);
    }

    proptest! {
        #[test]
        fn quantize_always_sums_to_total(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(1..200);
            let t = random_table(&mut rng, m);
            let total: u64 = (0..m).map(|s| t.freq(s) as u64).sum();
            prop_assert_eq!(total, FREQ_TOTAL as u64);
            for s in 0..m {
                prop_assert!(t.freq(s) >= 1);
            }
        }
    }

    #[test]
    fn empty_stream_is_tiny() {
        let payload = encode_symbols(std::iter::empty()).unwrap();
        assert!(!payload.is_empty() && payload.len() <= 5, "len {}", payload.len());
    }

    #[test]
    fn eight_uniform_symbols_cost_about_two_bytes() {
        let t = FreqTable::uniform(4).unwrap();
        let payload = encode_symbols((0..8).map(|i| (i % 4, &t))).unwrap();
        assert!(
            (2..=4).contains(&payload.len()),
            "expected 16 bits plus flush, got {} bytes",
            payload.len()
        );
    }

    #[test]
    fn roundtrip_static_table() {
        let t = quantize_pmf(&[0.7, 0.2, 0.1]).unwrap();
        let symbols = [0, 0, 1, 2, 0, 1, 0, 0, 0, 2, 2, 1, 0];
        let payload = encode_symbols(symbols.iter().map(|&s| (s, &t))).unwrap();
        let decoded = decode_symbols(&payload, symbols.len(), |_| Ok(t.clone())).unwrap();
        assert_eq!(decoded, symbols);
    }

    #[test]
    fn roundtrip_fuzz_with_changing_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for trial in 0..10_000 {
            let m = rng.random_range(2..24);
            let len = rng.random_range(0..60);
            // Per-position tables derived from a reseedable stream so the
            // decode provider can regenerate them independently.
            let table_seed = rng.random_range(0..u64::MAX / 2);
            let mut table_rng = ChaCha8Rng::seed_from_u64(table_seed);
            let tables: Vec<FreqTable> =
                (0..len).map(|_| random_table(&mut table_rng, m)).collect();
            let symbols: Vec<usize> = (0..len).map(|_| rng.random_range(0..m)).collect();
            let payload =
                encode_symbols(symbols.iter().zip(&tables).map(|(&s, t)| (s, t))).unwrap();
            let mut provider_rng = ChaCha8Rng::seed_from_u64(table_seed);
            let decoded = decode_symbols(&payload, len, |_| Ok(random_table(&mut provider_rng, m)))
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            assert_eq!(decoded, symbols, "trial {trial}");
        }
    }

    #[test]
    fn code_length_stays_near_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let m = rng.random_range(2..32);
            let len = rng.random_range(1..400);
            let t = random_table(&mut rng, m);
            // Draw symbols from the table's own distribution so skewed
            // tables are exercised with realistic streams.
            let mut enc = ArithmeticEncoder::new();
            for _ in 0..len {
                let v = rng.random_range(0..FREQ_TOTAL);
                let s = t.symbol_for(v);
                enc.encode(s, &t).unwrap();
            }
            let ideal = enc.ideal_bits();
            let payload = enc.finish();
            let actual_bits = (payload.len() * 8) as f64;
            assert!(
                actual_bits <= ideal + 64.0,
                "payload {actual_bits} bits vs ideal {ideal}"
            );
        }
    }

    #[test]
    fn mean_length_within_two_percent_on_long_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let t = quantize_pmf(&[0.5, 0.2, 0.15, 0.1, 0.05]).unwrap();
        let mut enc = ArithmeticEncoder::new();
        for _ in 0..20_000 {
            let v = rng.random_range(0..FREQ_TOTAL);
            enc.encode(t.symbol_for(v), &t).unwrap();
        }
        let ideal = enc.ideal_bits();
        let actual = (enc.finish().len() * 8) as f64;
        assert!(actual <= ideal * 1.02, "{actual} vs ideal {ideal}");
    }

    #[test]
    fn truncated_payload_errors_out() {
        let t = FreqTable::uniform(2).unwrap();
        let symbols: Vec<usize> = (0..200).map(|i| (i * 7 % 2) as usize).collect();
        let payload = encode_symbols(symbols.iter().map(|&s| (s, &t))).unwrap();
        let err = decode_symbols(&payload[..2], symbols.len(), |_| Ok(t.clone())).unwrap_err();
        assert!(matches!(err, Error::CorruptData(_)));
    }

    // A flip inside the flush-drain tail can decode identically because those
    // bits are consumed only after the last symbol decision, so the victim
    // byte is drawn from the first half of a stream carrying well over a
    // register of entropy past it; divergence is then forced.
    #[test]
    fn flipped_byte_never_roundtrips_silently() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..300 {
            let m = rng.random_range(4..16);
            let len = rng.random_range(32..120);
            let table_seed = rng.random_range(0..u64::MAX / 2);
            let mut table_rng = ChaCha8Rng::seed_from_u64(table_seed);
            let tables: Vec<FreqTable> =
                (0..len).map(|_| random_table(&mut table_rng, m)).collect();
            let symbols: Vec<usize> = (0..len).map(|_| rng.random_range(0..m)).collect();
            let mut enc = ArithmeticEncoder::new();
            for (&s, t) in symbols.iter().zip(&tables) {
                enc.encode(s, t).unwrap();
            }
            if enc.ideal_bits() < 100.0 {
                continue;
            }
            let mut payload = enc.finish();
            let victim = rng.random_range(0..payload.len() / 2);
            payload[victim] ^= rng.random_range(1..=255u8);
            let mut provider_rng = ChaCha8Rng::seed_from_u64(table_seed);
            match decode_symbols(&payload, len, |_| Ok(random_table(&mut provider_rng, m))) {
                Err(Error::CorruptData(_)) => {}
                Err(e) => panic!("trial {trial}: unexpected error {e}"),
                Ok(decoded) => {
                    assert_ne!(decoded, symbols, "trial {trial}: corruption went unnoticed")
                }
            }
        }
    }

    #[test]
    fn payloads_are_deterministic() {
        let t = quantize_pmf(&[0.6, 0.4]).unwrap();
        let symbols = [0usize, 1, 1, 0, 0, 0, 1];
        let a = encode_symbols(symbols.iter().map(|&s| (s, &t))).unwrap();
        let b = encode_symbols(symbols.iter().map(|&s| (s, &t))).unwrap();
        assert_eq!(a, b);
    }
}
