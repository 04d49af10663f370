use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("axis domain mismatch: expected {expected}, got {got}")]
    DomainMismatch { expected: &'static str, got: &'static str },

    #[error("LFSR taps 0x{taps:x} of degree {degree} are not primitive: measured period {period}, expected {expected}")]
    NonPrimitivePolynomial { degree: u32, taps: u64, period: u64, expected: u64 },

    #[error("LFSR seed state must be nonzero")]
    ZeroSeed,

    #[error("invalid LFSR degree {0}: must be in 2..=31")]
    BadDegree(u32),

    #[error("{what} = {value} does not divide {dim} = {dim_value}")]
    Divisibility { what: &'static str, value: usize, dim: &'static str, dim_value: usize },

    #[error("sequence length {got} does not match required {required} (accepted: exact or one short of it)")]
    SequenceLength { got: usize, required: usize },

    #[error("power scale must be positive, got {0}")]
    NonPositivePower(f64),

    #[error("bit count {got} does not match {required} ({positions} data positions x {bits_per_symbol} bits)")]
    BitCount { got: usize, required: usize, positions: usize, bits_per_symbol: usize },

    #[error("no data capacity: pilot comb occupies every resource element")]
    NoDataCapacity,

    #[error("sample vector length {got}, expected {expected}")]
    SampleLength { got: usize, expected: usize },

    #[error("delay tap {tap} exceeds CP length {cp_len}: model invalid")]
    DelayExceedsCp { tap: usize, cp_len: usize },

    #[error("hypothesis ({l},{k}) outside the unambiguous window {wl}x{wk}")]
    OutsideWindow { l: i64, k: i64, wl: usize, wk: usize },

    #[error("maximum Doppler {max_doppler:.3} bins exceeds the unambiguous half-window {half_window:.3} bins")]
    DopplerWindow { max_doppler: f64, half_window: f64 },

    #[error("no sequence length rule for {0}: need 2^k or 2^k-1")]
    NoSequenceForLength(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
