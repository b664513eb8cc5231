//! Byte-oriented range coder with a 64-bit low / 32-bit range state.
//!
//! Renormalization emits a byte whenever `range` drops below 2^24; carries
//! propagate through a cache byte plus a run of 0xFF bytes (the classic
//! LZMA arrangement). `finish` flushes five bytes so the decoder, which
//! primes itself with five reads, always sees the full final state. The
//! exact byte layout is documented in docs/FORMATS.md.

use super::cdf::{CdfTable, CDF_PRECISION_BITS, CDF_TOTAL};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Encode one symbol spanning `[cum, cum+freq)` of a table whose total
    /// is exactly 2^16. `freq` must be at least 1.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq >= 1 && cum + freq <= CDF_TOTAL);
        let r = self.range >> CDF_PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        // shift inside the 32-bit window: the byte just cached drops out
        self.low = ((self.low as u32) << 8) as u64;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    last_div: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            last_div: 0,
            input,
            pos: 0,
        };
        // first byte is the encoder's initial cache and is always zero
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        // the flush may legitimately leave the decoder reading a little
        // past the payload; missing bytes read as zero
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Cumulative-frequency threshold of the next symbol.
    pub fn threshold(&mut self) -> u32 {
        self.last_div = self.range >> CDF_PRECISION_BITS;
        (self.code / self.last_div).min(CDF_TOTAL - 1)
    }

    /// Consume the symbol previously located via `threshold`.
    pub fn consume(&mut self, cum: u32, freq: u32) {
        self.code = self.code.wrapping_sub(cum.wrapping_mul(self.last_div));
        self.range = self.last_div * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
    }
}

/// Encode integer symbols, one per element of the table. Out-of-range
/// values go through the escape slot followed by a raw 16-bit code.
pub fn range_encode(symbols: &[i32], table: &CdfTable) -> Result<Vec<u8>> {
    if symbols.len() != table.n_elements() {
        return Err(Error::Shape {
            op: "range_encode",
            detail: format!(
                "{} symbols for {} table elements",
                symbols.len(),
                table.n_elements()
            ),
        });
    }
    let mut enc = RangeEncoder::new();
    for (e, &v) in symbols.iter().enumerate() {
        let cums = table.cums(e);
        let slot = table.slot_of_value(v);
        enc.encode(cums[slot], cums[slot + 1] - cums[slot]);
        if slot == table.escape_slot() {
            let raw = (v as i64 + 32768) as u64;
            if raw > 0xFFFF {
                return Err(Error::Internal(format!("symbol {} outside escape range", v)));
            }
            encode_raw_byte(&mut enc, (raw >> 8) as u8);
            encode_raw_byte(&mut enc, (raw & 0xFF) as u8);
        }
    }
    Ok(enc.finish())
}

fn encode_raw_byte(enc: &mut RangeEncoder, b: u8) {
    // uniform 256-slot table, 256 quanta per slot
    enc.encode(b as u32 * 256, 256);
}

fn decode_raw_byte(dec: &mut RangeDecoder) -> u8 {
    let t = dec.threshold();
    let b = (t / 256).min(255);
    dec.consume(b * 256, 256);
    b as u8
}

/// Decode `table.n_elements()` symbols. Does not detect corruption by
/// itself; see [`range_decode_verified`].
pub fn range_decode(bytes: &[u8], table: &CdfTable) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(table.n_elements());
    for e in 0..table.n_elements() {
        let cums = table.cums(e);
        let t = dec.threshold();
        let slot = locate_slot(cums, t);
        dec.consume(cums[slot], cums[slot + 1] - cums[slot]);
        let v = match table.value_of_slot(slot) {
            Some(v) => v,
            None => {
                let hi = decode_raw_byte(&mut dec) as i64;
                let lo = decode_raw_byte(&mut dec) as i64;
                ((hi << 8 | lo) - 32768) as i32
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Decode and verify by re-encoding: any payload corruption shows up as a
/// byte mismatch at some position.
pub fn range_decode_verified(bytes: &[u8], table: &CdfTable) -> Result<Vec<i32>> {
    let symbols = range_decode(bytes, table)?;
    let recoded = range_encode(&symbols, table)?;
    if recoded != bytes {
        let pos = recoded
            .iter()
            .zip(bytes.iter())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| recoded.len().min(bytes.len()));
        return Err(Error::CorruptStream(format!(
            "re-encoded checksum mismatch at byte {}",
            pos
        )));
    }
    Ok(symbols)
}

/// Largest slot with cums[slot] <= t (binary search over the cumulative).
fn locate_slot(cums: &[u32], t: u32) -> usize {
    let mut lo = 0usize;
    let mut hi = cums.len() - 1; // slots are [lo, hi)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cums[mid] <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::cdf::DEFAULT_SYMBOL_BOUND;
    use crate::entropy::rate::estimate_rate;
    use crate::autodiff::tensor::Tensor;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn degenerate_source_is_nearly_free() {
        let table = CdfTable::build_scalar(0.0, 0.01, DEFAULT_SYMBOL_BOUND, 1000).unwrap();
        let symbols = vec![0i32; 1000];
        let bytes = range_encode(&symbols, &table).unwrap();
        assert!(bytes.len() <= 40, "payload {} bytes", bytes.len());
        assert_eq!(range_decode(&bytes, &table).unwrap(), symbols);
    }

    #[test]
    fn uniform_source_costs_one_byte_per_symbol() {
        // drive the low-level coder with a uniform 256-slot alphabet
        let n = 4096usize;
        let mut rng = SplitMix64::new(5);
        let symbols: Vec<u32> = (0..n).map(|_| rng.next_u64() as u32 % 256).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(s * 256, 256);
        }
        let bytes = enc.finish();
        let ideal = n as f64; // 8 bits each
        assert!(
            (bytes.len() as f64 - ideal).abs() <= 0.01 * ideal + 8.0,
            "{} bytes vs ideal {}",
            bytes.len(),
            ideal
        );
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &symbols {
            let t = dec.threshold();
            assert_eq!(t / 256, s);
            dec.consume(s * 256, 256);
        }
    }

    #[test]
    fn gaussian_batch_matches_rate_estimate() {
        let n = 4096usize;
        let mut rng = SplitMix64::new(77);
        // Box-Muller from the deterministic stream
        let mut symbols = Vec::with_capacity(n);
        for _ in 0..n {
            let u1 = rng.next_f64().max(1e-12);
            let u2 = rng.next_f64();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            symbols.push((3.0 * z).round() as i32);
        }
        let table = CdfTable::build_scalar(0.0, 3.0, DEFAULT_SYMBOL_BOUND, n).unwrap();
        let bytes = range_encode(&symbols, &table).unwrap();
        let actual_bits = bytes.len() as f64 * 8.0;

        let y = Tensor::<f32>::new(vec![n], symbols.iter().map(|&v| v as f32).collect()).unwrap();
        let mu = Tensor::<f32>::zeros(&[n]);
        let sigma = Tensor::<f32>::full(&[n], 3.0);
        let est = estimate_rate(&y, &mu, &sigma, false).unwrap().total_bits;
        assert!(
            (actual_bits - est).abs() <= 0.01 * est + 256.0,
            "actual {actual_bits} vs estimated {est}"
        );
        assert_eq!(range_decode(&bytes, &table).unwrap(), symbols);
    }

    #[test]
    fn million_symbol_round_trip() {
        let n = 1_000_000usize;
        let mut rng = SplitMix64::new(123);
        let table = CdfTable::build_scalar(0.0, 5.0, DEFAULT_SYMBOL_BOUND, n).unwrap();
        let symbols: Vec<i32> = (0..n)
            .map(|_| (rng.next_range(-80.0, 80.0)).round() as i32)
            .collect();
        let bytes = range_encode(&symbols, &table).unwrap();
        let back = range_decode(&bytes, &table).unwrap();
        assert_eq!(back, symbols);
    }

    #[test]
    fn escape_values_round_trip() {
        let table = CdfTable::build_scalar(0.0, 1.0, DEFAULT_SYMBOL_BOUND, 6).unwrap();
        let symbols = vec![0, -65, 65, 3000, -3000, 64];
        let bytes = range_encode(&symbols, &table).unwrap();
        assert_eq!(range_decode(&bytes, &table).unwrap(), symbols);
    }

    #[test]
    fn empty_payload_round_trip() {
        let table = CdfTable::build_scalar(0.0, 1.0, DEFAULT_SYMBOL_BOUND, 0).unwrap();
        let bytes = range_encode(&[], &table).unwrap();
        let back = range_decode_verified(&bytes, &table).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn flipped_byte_is_detected() {
        let n = 512usize;
        let mut rng = SplitMix64::new(9);
        let table = CdfTable::build_scalar(0.0, 2.0, DEFAULT_SYMBOL_BOUND, n).unwrap();
        let symbols: Vec<i32> = (0..n)
            .map(|_| rng.next_range(-6.0, 6.0).round() as i32)
            .collect();
        let mut bytes = range_encode(&symbols, &table).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        match range_decode_verified(&bytes, &table) {
            Err(crate::error::Error::CorruptStream(msg)) => {
                assert!(msg.contains("byte"), "{msg}");
            }
            other => panic!("expected corruption, got {:?}", other.map(|v| v.len())),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lossless_for_random_tables_and_symbols(
            seed in 0u64..1_000_000,
            n in 1usize..400,
            mu in -80.0f32..80.0,
            sigma in 0.01f32..64.0,
        ) {
            let mut rng = SplitMix64::new(seed);
            let table = CdfTable::build_scalar(mu, sigma, DEFAULT_SYMBOL_BOUND, n).unwrap();
            let symbols: Vec<i32> = (0..n)
                .map(|_| rng.next_range(-200.0, 200.0).round() as i32)
                .collect();
            let bytes = range_encode(&symbols, &table).unwrap();
            let back = range_decode_verified(&bytes, &table).unwrap();
            prop_assert_eq!(back, symbols);
        }
    }
}
