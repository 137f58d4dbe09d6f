use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("route `{route}` has an empty queue order")]
    EmptyRoute { route: String },

    #[error("unknown queue `{queue}`{}", context_suffix(.context))]
    UnknownQueue { queue: String, context: String },

    #[error("unknown route `{0}`")]
    UnknownRoute(String),

    #[error("non-positive rate for {what} at `{at}`: {value}")]
    NonPositiveRate {
        what: &'static str,
        at: String,
        value: f64,
    },

    #[error("{kernel} kernel of queue `{queue}` is not stochastic at m = {m} (row sums to {sum})")]
    KernelNotStochastic {
        queue: String,
        kernel: &'static str,
        m: usize,
        sum: f64,
    },

    #[error("kernel of queue `{queue}` has no row for m = {m}")]
    KernelOutOfRange { queue: String, m: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("state space S(n) has {size} elements, above the cap of {cap}")]
    ExplosionGuard { size: f64, cap: u64 },

    #[error("network is unstable at queue `{queue}` (load ratio {ratio})")]
    UnstableNetwork { queue: String, ratio: f64 },

    #[error("route `{0}` has no documents in transfer")]
    ZeroCount(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent initial state: {0}")]
    InconsistentInitialState(String),

    #[error("event budget of {0} events exceeded")]
    EventBudgetExceeded(u64),

    #[error("simultaneous events at t = {time} (candidate gap {gap:e})")]
    SimultaneityDetected { time: f64, gap: f64 },

    #[error("size law for route {route} is atomic: {law}")]
    AtomicSizeLaw { route: usize, law: String },

    #[error("allocation starves route {route}: zero rate with {count} documents in transfer")]
    StarvedRoute { route: usize, count: u32 },

    #[error("observation window is empty")]
    EmptyWindow,

    #[error("batch means needs at least two batches, got {0}")]
    TooFewBatches(usize),

    #[error("size laws do not share a mean: {0}")]
    MeanMismatch(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" in {context}")
    }
}
