use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point with norm {norm} lies outside the contracted domain (norm < 2)")]
    OutOfDomain { norm: f64 },
    #[error("training progress t = {0} outside [0, 1]")]
    ProgressOutOfRange(f64),
    #[error("invalid beta schedule: beta0 = {beta0}, beta1 = {beta1}")]
    InvalidSchedule { beta0: f64, beta1: f64 },
    #[error("degenerate ray: near = {near}, far = {far}")]
    DegenerateRay { near: f64, far: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite training loss at iteration {iteration} (ray {ray:?})")]
    NonFiniteLoss { iteration: usize, ray: Option<usize> },
    #[error("non-finite appearance loss at iteration {iteration} (image {image}, pixel {pixel})")]
    NonFiniteAppearance {
        iteration: usize,
        image: usize,
        pixel: usize,
    },
    #[error("mesh vertex {index} has contracted norm {norm} >= 2")]
    VertexOutOfDomain { index: usize, norm: f64 },
    #[error("attribute mismatch: {0}")]
    AttributeMismatch(String),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
}

pub type Result<T> = core::result::Result<T, Error>;
