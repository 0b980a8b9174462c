//! Arbitrary-precision modular arithmetic, probable-prime generation and the
//! seeded random source shared by every party.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Miller-Rabin rounds; error probability at most 4^-64 per candidate.
pub const MILLER_RABIN_ROUNDS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MathError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("value is not invertible modulo the given modulus")]
    NotInvertible,
    #[error("malformed hexadecimal integer: {0:?}")]
    Hex(String),
}

/// Deterministic random stream. Identical seeds produce identical byte streams.
///
/// A source is owned by exactly one party; [`RandomSource::fork`] hands out an
/// independent child stream without sharing state.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// A named stream derived from `seed`. Streams with different labels are
    /// independent of each other and of `RandomSource::new(seed)`.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_be_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self { rng: ChaCha20Rng::from_seed(key) }
    }

    pub fn fork(&mut self) -> Self {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        Self { rng: ChaCha20Rng::from_seed(key) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.gen::<bool>()
    }

    /// Uniform `f64` in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        self.rng.gen_range(low..high)
    }

    /// Uniform index in `[0, bound)`.
    pub fn index(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }
}

/// Precomputed powers `base^(j·2^(w·k))` for exponents up to `max_bits`.
#[derive(Clone)]
pub struct FixedBase {
    base: BigUint,
    modulus: BigUint,
    max_bits: u64,
    table: Vec<Vec<BigUint>>,
}

const FIXED_BASE_WINDOW: u64 = 8;

impl FixedBase {
    pub fn new(base: &BigUint, modulus: &BigUint, max_bits: u64) -> Self {
        let digits = max_bits.div_ceil(FIXED_BASE_WINDOW) as usize;
        let mut table = Vec::with_capacity(digits);
        let mut step = base % modulus;
        for _ in 0..digits {
            let mut row = Vec::with_capacity(1 << FIXED_BASE_WINDOW);
            row.push(BigUint::one());
            for j in 1..1usize << FIXED_BASE_WINDOW {
                row.push(&row[j - 1] * &step % modulus);
            }
            step = &row[(1 << FIXED_BASE_WINDOW) - 1] * &step % modulus;
            table.push(row);
        }
        Self { base: base.clone(), modulus: modulus.clone(), max_bits, table }
    }

    pub fn pow(&self, exp: &BigUint) -> BigUint {
        if exp.bits() > self.max_bits {
            return self.base.modpow(exp, &self.modulus);
        }
        let mut acc = BigUint::one();
        for (k, digit) in exp.to_radix_le(1 << FIXED_BASE_WINDOW).into_iter().enumerate() {
            if digit != 0 {
                acc = acc * &self.table[k][digit as usize] % &self.modulus;
            }
        }
        acc % &self.modulus
    }
}

impl std::fmt::Debug for FixedBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixedBase").field("base", &self.base).field("max_bits", &self.max_bits).finish()
    }
}

impl PartialEq for FixedBase {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.modulus == other.modulus
    }
}

impl Eq for FixedBase {}

/// `base^exp mod modulus`.
pub fn mod_pow(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> Result<BigUint, MathError> {
    if *modulus < BigUint::from(2u8) {
        return Err(MathError::Domain("modulus must be at least 2"));
    }
    Ok(base.modpow(exp, modulus))
}

/// Inverse of `a` modulo `n` via the extended Euclidean algorithm.
pub fn mod_inv(a: &BigUint, n: &BigUint) -> Result<BigUint, MathError> {
    if *n < BigUint::from(2u8) {
        return Err(MathError::Domain("modulus must be at least 2"));
    }
    let n_int = BigInt::from(n.clone());
    let ext = BigInt::from(a % n).extended_gcd(&n_int);
    if !ext.gcd.is_one() {
        return Err(MathError::NotInvertible);
    }
    let x = ext.x.mod_floor(&n_int);
    Ok(x.to_biguint().expect("mod_floor of a positive modulus is non-negative"))
}

pub fn gcd(a: &BigUint, b: &BigUint) -> BigUint {
    a.gcd(b)
}

pub fn lcm(a: &BigUint, b: &BigUint) -> BigUint {
    a.lcm(b)
}

/// Uniform integer in `[0, 2^bits)`.
pub fn sample_bits(bits: u64, rng: &mut RandomSource) -> BigUint {
    if bits == 0 {
        return BigUint::zero();
    }
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let excess = bytes as u64 * 8 - bits;
    buf[0] &= 0xffu8 >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[0, bound)` by rejection sampling over `bits(bound)`-bit draws.
pub fn sample_below(bound: &BigUint, rng: &mut RandomSource) -> Result<BigUint, MathError> {
    if bound.is_zero() {
        return Err(MathError::Domain("sample bound must be positive"));
    }
    if bound.is_one() {
        return Ok(BigUint::zero());
    }
    let bits = (bound - 1u8).bits();
    loop {
        let candidate = sample_bits(bits, rng);
        if &candidate < bound {
            return Ok(candidate);
        }
    }
}

/// Uniform element of `[1, n)` coprime to `n`.
pub fn sample_unit(n: &BigUint, rng: &mut RandomSource) -> Result<BigUint, MathError> {
    loop {
        let r = sample_below(n, rng)?;
        if !r.is_zero() && r.gcd(n).is_one() {
            return Ok(r);
        }
    }
}

fn small_primes() -> &'static [u32] {
    use std::sync::OnceLock;
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let mut sieve = vec![true; 1000];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..1000 {
            if sieve[i] {
                for j in (i * i..1000).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        (0..1000u32).filter(|&i| sieve[i as usize]).collect()
    })
}

/// Trial division by primes below 1000, then Miller-Rabin with random bases.
pub fn is_probable_prime(n: &BigUint, rng: &mut RandomSource) -> bool {
    if *n < BigUint::from(2u8) {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    miller_rabin(n, MILLER_RABIN_ROUNDS, rng)
}

fn miller_rabin(n: &BigUint, rounds: usize, rng: &mut RandomSource) -> bool {
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    // bases drawn from [2, n-2]
    let span = n - 3u8;
    'witness: for _ in 0..rounds {
        let a = sample_below(&span, rng).expect("n > 1000 here") + 2u8;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Probable prime with exactly `bits` bits (top bit set).
pub fn gen_prime(bits: u64, rng: &mut RandomSource) -> Result<BigUint, MathError> {
    if bits < 2 {
        return Err(MathError::Domain("a prime needs at least 2 bits"));
    }
    if bits == 2 {
        return Ok(BigUint::from(if rng.coin() { 3u8 } else { 2u8 }));
    }
    let top = BigUint::one() << (bits - 1);
    loop {
        let candidate = sample_bits(bits, rng) | &top | BigUint::one();
        if is_probable_prime(&candidate, rng) {
            return Ok(candidate);
        }
    }
}

/// Big-endian lowercase hexadecimal, no prefix. Zero encodes as "0".
pub fn to_hex(value: &BigUint) -> String {
    value.to_str_radix(16)
}

/// Hex encoding left-padded with zeros to `width` characters.
pub fn to_hex_padded(value: &BigUint, width: usize) -> String {
    format!("{:0>width$}", value.to_str_radix(16), width = width)
}

pub fn from_hex(text: &str) -> Result<BigUint, MathError> {
    let trimmed = text.trim();
    let digits = trimmed.strip_prefix("0x").unwrap_or(trimmed);
    if digits.is_empty() {
        return Err(MathError::Hex(text.to_string()));
    }
    BigUint::parse_bytes(digits.as_bytes(), 16).ok_or_else(|| MathError::Hex(text.to_string()))
}

/// Reduces a signed integer into `[0, modulus)`.
pub fn reduce_signed(value: &BigInt, modulus: &BigUint) -> BigUint {
    let m = BigInt::from(modulus.clone());
    value.mod_floor(&m).to_biguint().expect("mod_floor is non-negative")
}

/// Interprets a residue above `modulus / 2` as negative.
pub fn lift_signed(value: &BigUint, modulus: &BigUint) -> BigInt {
    let half = modulus >> 1;
    if *value > half {
        -BigInt::from(modulus - value)
    } else {
        BigInt::from_biguint(Sign::Plus, value.clone())
    }
}

/// Serde adapter storing a `BigUint` as a big-endian hex string.
pub mod hex_serde {
    use super::{from_hex, to_hex};
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &BigUint, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&to_hex(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(deserializer)?;
        from_hex(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn mod_pow_small_cases() {
        assert_eq!(mod_pow(&big(2), &big(10), &big(1000)).unwrap(), big(24));
        assert_eq!(mod_pow(&big(5), &big(0), &big(7)).unwrap(), big(1));
        assert_eq!(mod_pow(&big(5), &big(3), &big(1)), Err(MathError::Domain("modulus must be at least 2")));
    }

    #[test]
    fn mod_pow_matches_repeated_multiplication() {
        let mut acc = 1u64;
        for _ in 0..13 {
            acc = acc * 7 % 2537;
        }
        assert_eq!(mod_pow(&big(7), &big(13), &big(2537)).unwrap(), big(acc));
    }

    #[test]
    fn mod_inv_cases() {
        assert_eq!(mod_inv(&big(3), &big(7)).unwrap(), big(5));
        assert_eq!(mod_inv(&big(10), &big(17)).unwrap(), big(12));
        assert_eq!(mod_inv(&big(2), &big(4)), Err(MathError::NotInvertible));
    }

    #[test]
    fn sixteen_bit_prime_passes_trial_division() {
        let p = gen_prime(16, &mut RandomSource::new(1)).unwrap();
        assert_eq!(p.bits(), 16);
        let p = u64::try_from(&p).unwrap();
        assert!((2..=256u64).all(|d| p % d != 0));
    }

    #[test]
    fn two_bit_prime() {
        for seed in 0..8 {
            let p = gen_prime(2, &mut RandomSource::new(seed)).unwrap();
            assert!(p == big(2) || p == big(3));
        }
    }

    #[test]
    fn prime_generation_is_deterministic() {
        let a = gen_prime(128, &mut RandomSource::new(42)).unwrap();
        let b = gen_prime(128, &mut RandomSource::new(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bits(), 128);
    }

    #[test]
    fn sampling_ranges() {
        let mut rng = RandomSource::new(3);
        assert_eq!(sample_below(&big(1), &mut rng).unwrap(), big(0));
        assert!(sample_below(&big(0), &mut rng).is_err());
        for _ in 0..200 {
            assert!(sample_bits(8, &mut rng) < big(256));
        }
        assert_eq!(lcm(&big(4), &big(6)), big(12));
    }

    #[test]
    fn sample_below_is_roughly_uniform() {
        let mut rng = RandomSource::new(9);
        let mut counts = [0usize; 6];
        for _ in 0..6000 {
            let v = u64::try_from(&sample_below(&big(6), &mut rng).unwrap()).unwrap();
            counts[v as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = RandomSource::derive(5, "cloud");
        let mut b = RandomSource::derive(5, "target");
        let mut c = RandomSource::derive(5, "cloud");
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, c.next_u64());
    }

    #[test]
    fn hex_roundtrip_and_signed_lift() {
        let v = BigUint::parse_bytes(b"123456789abcdef0123456789", 16).unwrap();
        assert_eq!(from_hex(&to_hex(&v)).unwrap(), v);
        assert_eq!(to_hex_padded(&big(255), 6), "0000ff");
        assert!(from_hex("xyz").is_err());
        let n = big(101);
        assert_eq!(lift_signed(&reduce_signed(&BigInt::from(-7), &n), &n), BigInt::from(-7));
    }

    proptest! {
        #[test]
        fn fixed_base_matches_modpow(base in 2u64.., modulus in 3u64.., exp in proptest::collection::vec(any::<u8>(), 0..24)) {
            let exp = BigUint::from_bytes_le(&exp);
            let table = FixedBase::new(&big(base), &big(modulus), 96);
            prop_assert_eq!(table.pow(&exp), big(base).modpow(&exp, &big(modulus)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn inverse_property(a in 1u64..1_000_000, n in 2u64..1_000_000) {
            let (a, n) = (big(a), big(n));
            match mod_inv(&a, &n) {
                Ok(x) => prop_assert_eq!((x * &a) % &n, BigUint::one() % &n),
                Err(_) => prop_assert!(!a.gcd(&n).is_one()),
            }
        }

        #[test]
        fn exponent_addition(g in 0u64..u64::MAX, a in 0u64..1 << 40, b in 0u64..1 << 40, n in 2u64..u64::MAX) {
            let (g, n) = (big(g), big(n));
            let lhs = mod_pow(&g, &(big(a) + big(b)), &n).unwrap();
            let rhs = mod_pow(&g, &big(a), &n).unwrap() * mod_pow(&g, &big(b), &n).unwrap() % &n;
            prop_assert_eq!(lhs, rhs);
        }
    }
}
