use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} is not a prime >= 3")]
    NotPrime(u64),

    #[error("value {value} out of range [0, {bound})")]
    OutOfRange { value: u64, bound: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group mismatch: {0}")]
    GroupMismatch(String),

    #[error("{value} is not a root of unity of order {order}")]
    NotRootOfUnity { value: String, order: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("set is not restricted 3-AP free: x = {x:?}, a = {a:?}")]
    NotFree { x: Vec<u32>, a: Vec<u32> },

    #[error("format error: {0}")]
    Format(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
